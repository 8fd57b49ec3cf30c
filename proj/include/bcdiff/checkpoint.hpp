#ifndef BCDIFF_CHECKPOINT_HPP
#define BCDIFF_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcdiff/dsp.hpp"
#include "bcdiff/score_model.hpp"

// Weight container: 8-byte magic, little-endian u32 container version,
// u32 JSON header length, the JSON header, then raw little-endian scalar
// payload. The header carries the model/process/front-end configuration and
// a directory of named arrays ("w.<param>", optional "ema.<param>", and the
// frozen "buf.temb.fourier" time-feature projection). Nothing in the file
// depends on when or where it was written, so identical runs produce
// identical bytes.

namespace bcdiff::ckpt {

inline constexpr char kMagic[9] = "BCDIFFCK";
inline constexpr std::uint32_t kContainerVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

template <typename T>
inline const char* dtype_name();

template <>
inline const char* dtype_name<float>() {
    return "float32";
}

template <>
inline const char* dtype_name<double>() {
    return "float64";
}

struct CheckpointMeta {
    ScoreModelConfig model;
    sde::SdeParams process;
    dsp::StftConfig stft;
    int sample_rate = 16000;
    std::int64_t step = 0;
    std::string dtype;  // filled on save/load from the scalar type
};

namespace detail {

inline void put_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

inline nlohmann::json sde_to_json(const sde::SdeParams& p) {
    return {{"gamma", p.gamma},
            {"sigma_min", p.sigma_min},
            {"sigma_max", p.sigma_max},
            {"t_eps", p.t_eps}};
}

inline sde::SdeParams sde_from_json(const nlohmann::json& j) {
    sde::SdeParams p;
    p.gamma = j.at("gamma").get<double>();
    p.sigma_min = j.at("sigma_min").get<double>();
    p.sigma_max = j.at("sigma_max").get<double>();
    p.t_eps = j.at("t_eps").get<double>();
    return p;
}

inline nlohmann::json stft_to_json(const dsp::StftConfig& c) {
    return {{"window_len", c.window_len},
            {"hop", c.hop},
            {"n_frames_target", c.n_frames_target},
            {"compress_exponent", c.compress_exponent},
            {"compress_scale", c.compress_scale}};
}

inline dsp::StftConfig stft_from_json(const nlohmann::json& j) {
    dsp::StftConfig c;
    c.window_len = j.at("window_len").get<int>();
    c.hop = j.at("hop").get<int>();
    c.n_frames_target = j.at("n_frames_target").get<int>();
    c.compress_exponent = j.at("compress_exponent").get<double>();
    c.compress_scale = j.at("compress_scale").get<double>();
    return c;
}

}  // namespace detail

// Writes raw weights, the time-feature buffer, and (when provided) the EMA
// shadow indexed parallel to the parameter store.
template <typename T>
inline void save_checkpoint(const std::string& path, const ScoreModel<T>& model,
                            const CheckpointMeta& meta,
                            const std::vector<nn::AlignedVec<T>>* ema = nullptr) {
    const nn::ParamStore<T>& ps = model.params();
    if (ema)
        require(ema->size() == ps.count(),
                "save_checkpoint: EMA shadow has " + str(ema->size()) + " arrays, model has " +
                    str(ps.count()));

    nlohmann::json header;
    header["format_version"] = kContainerVersion;
    header["dtype"] = dtype_name<T>();
    header["model"] = nlohmann::json(model.config().to_kv());
    header["sde"] = detail::sde_to_json(meta.process);
    header["stft"] = detail::stft_to_json(meta.stft);
    header["sample_rate"] = meta.sample_rate;
    header["step"] = meta.step;

    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    const auto add_entry = [&](const std::string& name, std::uint64_t count) {
        dir.push_back({{"name", name}, {"count", count}, {"byte_offset", offset}});
        offset += count * sizeof(T);
    };
    add_entry("buf.temb.fourier", model.fourier_buffer().size());
    for (std::size_t i = 0; i < ps.count(); ++i)
        add_entry("w." + ps.at(i).name, ps.at(i).value.size());
    if (ema)
        for (std::size_t i = 0; i < ps.count(); ++i)
            add_entry("ema." + ps.at(i).name, (*ema)[i].size());
    header["arrays"] = std::move(dir);

    const std::string header_str = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "save_checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 8);
    detail::put_u32(f, kContainerVersion);
    detail::put_u32(f, static_cast<std::uint32_t>(header_str.size()));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    const auto write_array = [&](const auto& v) {
        f.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(T)));
    };
    write_array(model.fourier_buffer());
    for (std::size_t i = 0; i < ps.count(); ++i) write_array(ps.at(i).value);
    if (ema)
        for (std::size_t i = 0; i < ps.count(); ++i) write_array((*ema)[i]);
    require(f.good(), "save_checkpoint: write failed for " + path);
}

template <typename T>
struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<ScoreModel<T>> model;      // raw training weights
    std::unique_ptr<ScoreModel<T>> ema_model;  // null when the file has no EMA arrays
};

template <typename T>
inline LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load_checkpoint: cannot open " + path);
    std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(data.size() >= 16, "load_checkpoint: " + path + " is truncated");
    require(std::memcmp(data.data(), kMagic, 8) == 0,
            "load_checkpoint: " + path + " is not a checkpoint container");
    std::uint32_t version = 0, header_len = 0;
    std::memcpy(&version, data.data() + 8, 4);
    std::memcpy(&header_len, data.data() + 12, 4);
    require(version == kContainerVersion,
            "load_checkpoint: unsupported container version " + str(version));
    require(16 + static_cast<std::size_t>(header_len) <= data.size(),
            "load_checkpoint: header extends past end of " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.data() + 16, data.data() + 16 + header_len);
    } catch (const nlohmann::json::exception& e) {
        fail("load_checkpoint: bad header in " + path + ": " + e.what());
    }

    LoadedCheckpoint<T> out;
    try {
        out.meta.dtype = header.at("dtype").get<std::string>();
        require(out.meta.dtype == dtype_name<T>(),
                "load_checkpoint: file holds " + out.meta.dtype + " but " + dtype_name<T>() +
                    " was requested");
        std::map<std::string, std::string> kv;
        for (const auto& [k, v] : header.at("model").items())
            kv[k] = v.template get<std::string>();
        out.meta.model = ScoreModelConfig::from_kv(kv);
        out.meta.process = detail::sde_from_json(header.at("sde"));
        out.meta.stft = detail::stft_from_json(header.at("stft"));
        out.meta.sample_rate = header.at("sample_rate").get<int>();
        out.meta.step = header.at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail("load_checkpoint: incomplete header in " + path + ": " + e.what());
    }
    out.meta.model.validate();
    out.meta.process.validate();
    out.meta.stft.validate();

    const char* payload = data.data() + 16 + header_len;
    const std::size_t payload_len = data.size() - 16 - header_len;
    out.model = std::make_unique<ScoreModel<T>>(out.meta.model, out.meta.process, 0);

    bool has_ema = false;
    for (const auto& entry : header.at("arrays"))
        if (entry.at("name").get<std::string>().rfind("ema.", 0) == 0) has_ema = true;
    if (has_ema)
        out.ema_model = std::make_unique<ScoreModel<T>>(out.meta.model, out.meta.process, 0);

    std::size_t filled_w = 0, filled_ema = 0;
    bool have_fourier = false;
    for (const auto& entry : header.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::uint64_t count = entry.at("count").get<std::uint64_t>();
        const std::uint64_t off = entry.at("byte_offset").get<std::uint64_t>();
        require(off + count * sizeof(T) <= payload_len,
                "load_checkpoint: array " + name + " extends past end of " + path);

        T* target = nullptr;
        if (name == "buf.temb.fourier") {
            require(out.model->fourier_buffer().size() == count,
                    "load_checkpoint: time-feature buffer size mismatch for " + name);
            target = out.model->fourier_buffer().data();
            have_fourier = true;
        } else if (name.rfind("w.", 0) == 0) {
            nn::Param<T>* p = out.model->params().find(name.substr(2));
            require(p != nullptr, "load_checkpoint: unknown parameter " + name);
            require(p->value.size() == count,
                    "load_checkpoint: size mismatch for " + name + " (file " + str(count) +
                        ", model " + str(p->value.size()) + ")");
            target = p->value.data();
            ++filled_w;
        } else if (name.rfind("ema.", 0) == 0) {
            nn::Param<T>* p = out.ema_model->params().find(name.substr(4));
            require(p != nullptr, "load_checkpoint: unknown parameter " + name);
            require(p->value.size() == count,
                    "load_checkpoint: size mismatch for " + name);
            target = p->value.data();
            ++filled_ema;
        } else {
            fail("load_checkpoint: unrecognized array " + name + " in " + path);
        }
        std::memcpy(target, payload + off, count * sizeof(T));
    }
    require(have_fourier, "load_checkpoint: missing time-feature buffer in " + path);
    require(filled_w == out.model->params().count(),
            "load_checkpoint: file fills " + str(filled_w) + " of " +
                str(out.model->params().count()) + " parameters");
    if (has_ema) {
        require(filled_ema == out.ema_model->params().count(),
                "load_checkpoint: incomplete EMA arrays in " + path);
        out.ema_model->fourier_buffer() = out.model->fourier_buffer();
    }
    return out;
}

// Header-only peek for tooling that wants the configuration without paying
// for weight reconstruction.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "read_checkpoint_meta: cannot open " + path);
    char magic[8];
    std::uint32_t version = 0, header_len = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&header_len), 4);
    require(f.good() && std::memcmp(magic, kMagic, 8) == 0,
            "read_checkpoint_meta: " + path + " is not a checkpoint container");
    require(version == kContainerVersion,
            "read_checkpoint_meta: unsupported container version " + str(version));
    std::string header_str(header_len, '\0');
    f.read(header_str.data(), header_len);
    require(f.good(), "read_checkpoint_meta: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        fail("read_checkpoint_meta: bad header in " + path + ": " + e.what());
    }
    CheckpointMeta meta;
    try {
        meta.dtype = header.at("dtype").get<std::string>();
        std::map<std::string, std::string> kv;
        for (const auto& [k, v] : header.at("model").items()) kv[k] = v.get<std::string>();
        meta.model = ScoreModelConfig::from_kv(kv);
        meta.process = detail::sde_from_json(header.at("sde"));
        meta.stft = detail::stft_from_json(header.at("stft"));
        meta.sample_rate = header.at("sample_rate").get<int>();
        meta.step = header.at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail("read_checkpoint_meta: incomplete header in " + path + ": " + e.what());
    }
    return meta;
}

// Key-value text config: one "key = value" per line, '#' comments, blank
// lines ignored. Feeds the same from_kv path the container header uses.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        const std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
        ++line_no;
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;

        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        require(eq != std::string::npos,
                "config line " + str(line_no) + " is not key = value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        require(!key.empty(), "config line " + str(line_no) + " has an empty key");
        require(kv.find(key) == kv.end(), "config repeats key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "read_kv_file: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_kv_text(text);
}

}  // namespace bcdiff::ckpt

#endif  // BCDIFF_CHECKPOINT_HPP
