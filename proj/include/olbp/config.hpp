#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "olbp/common.hpp"

namespace olbp {

enum class FdmInputMode { olm, concat_at_input, per_scale_concat };
enum class OlmVariant { full, no_dilated, no_multiply, no_concat, no_seg_sup };

inline std::string to_string(FdmInputMode m) {
    switch (m) {
        case FdmInputMode::olm: return "olm";
        case FdmInputMode::concat_at_input: return "concat_at_input";
        case FdmInputMode::per_scale_concat: return "per_scale_concat";
    }
    return "?";
}

inline std::string to_string(OlmVariant v) {
    switch (v) {
        case OlmVariant::full: return "full";
        case OlmVariant::no_dilated: return "no_dilated";
        case OlmVariant::no_multiply: return "no_multiply";
        case OlmVariant::no_concat: return "no_concat";
        case OlmVariant::no_seg_sup: return "no_seg_sup";
    }
    return "?";
}

// Full architecture description: five encoder blocks, per-level localization
// block geometry, and the ablation switches.
struct OLBPConfig {
    std::string scale_preset = "toy";  // paper | toy | custom
    std::int64_t input_h = 64, input_w = 64, input_c = 3;
    std::array<std::int64_t, 5> block_channels{8, 16, 32, 64, 64};
    std::array<std::array<int, 4>, 5> olm_dilation_rates{
        {{1, 3, 5, 7}, {1, 3, 5, 7}, {1, 3, 5, 7}, {1, 2, 3, 4}, {1, 2, 3, 4}}};
    std::array<std::int64_t, 5> olm_dilation_channels{4, 8, 16, 32, 32};
    std::array<int, 5> olm_conv2_kernel{7, 5, 5, 3, 3};
    std::array<std::int64_t, 5> olm_conv2_channels{16, 32, 64, 128, 128};
    bool use_olm = true;
    bool use_bpm = true;
    FdmInputMode fdm_input_mode = FdmInputMode::olm;
    OlmVariant olm_variant = OlmVariant::full;
    double fdm_sigma = 2.0;
    std::uint64_t rng_seed = 1;

    static OLBPConfig paper() {
        OLBPConfig c;
        c.scale_preset = "paper";
        c.input_h = c.input_w = 288;
        c.block_channels = {64, 128, 256, 512, 512};
        c.olm_dilation_channels = {32, 64, 128, 256, 256};
        c.olm_conv2_kernel = {7, 5, 5, 3, 3};
        c.olm_conv2_channels = {128, 256, 512, 1024, 1024};
        c.fdm_sigma = 24.0;
        return c;
    }

    // paper geometry with every channel count divided by 8 on a 64x64 canvas
    static OLBPConfig toy() { return OLBPConfig{}; }

    void validate() const {
        if (input_c < 1) throw DataError("config: input_c must be >= 1");
        if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
            throw DataError("config: input size must be a positive multiple of 16 "
                            "(five encoder levels)");
        for (std::int64_t c : block_channels)
            if (c < 1) throw DataError("config: block_channels must be positive");
        for (const auto& rates : olm_dilation_rates) {
            for (int r : rates)
                if (r < 1) throw DataError("config: dilation rates must be >= 1");
        }
        for (std::int64_t c : olm_dilation_channels)
            if (c < 1) throw DataError("config: olm_dilation_channels must be positive");
        for (int k : olm_conv2_kernel)
            if (k < 1 || k % 2 == 0)
                throw DataError("config: olm_conv2 kernels must be odd and positive");
        for (std::int64_t c : olm_conv2_channels)
            if (c < 1) throw DataError("config: olm_conv2 channels must be positive");
        if (fdm_sigma <= 0) throw DataError("config: fdm_sigma must be positive");
        if (use_olm != (fdm_input_mode == FdmInputMode::olm))
            throw DataError("config: use_olm must match fdm_input_mode (olm <=> use_olm)");
    }

    std::string to_text() const {
        std::ostringstream out;
        auto list = [](const auto& arr) {
            std::string s;
            for (std::size_t i = 0; i < arr.size(); ++i)
                s += (i ? "," : "") + std::to_string(arr[i]);
            return s;
        };
        out << "scale_preset = " << scale_preset << "\n";
        out << "input = " << input_h << "x" << input_w << "x" << input_c << "\n";
        out << "block_channels = " << list(block_channels) << "\n";
        for (int i = 0; i < 5; ++i)
            out << "olm_rates_" << (i + 1) << " = " << list(olm_dilation_rates[std::size_t(i)])
                << "\n";
        out << "olm_dilation_channels = " << list(olm_dilation_channels) << "\n";
        std::string conv2;
        for (int i = 0; i < 5; ++i)
            conv2 += std::string(i ? "," : "") + std::to_string(olm_conv2_kernel[std::size_t(i)]) +
                     ":" + std::to_string(olm_conv2_channels[std::size_t(i)]);
        out << "olm_conv2 = " << conv2 << "\n";
        out << "use_olm = " << (use_olm ? "true" : "false") << "\n";
        out << "use_bpm = " << (use_bpm ? "true" : "false") << "\n";
        out << "fdm_input_mode = " << to_string(fdm_input_mode) << "\n";
        out << "olm_variant = " << to_string(olm_variant) << "\n";
        out << "fdm_sigma = " << fdm_sigma << "\n";
        out << "rng_seed = " << rng_seed << "\n";
        return out.str();
    }

    static OLBPConfig from_key_values(const std::map<std::string, std::string>& kv);
    static OLBPConfig parse_text(const std::string& text);
    static OLBPConfig load(const std::string& path);

    std::uint64_t hash() const {
        // FNV-1a over the canonical text
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : to_text()) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

// "key = value" lines with '#' comments; returns lowercase keys
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& s, const std::string& key) {
    std::array<T, N> out{};
    std::istringstream in(s);
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
        if (i >= N) throw DataError("config: too many values for " + key);
        out[i++] = static_cast<T>(std::stoll(trim(item)));
    }
    if (i != N)
        throw DataError("config: " + key + " needs " + std::to_string(N) + " values, got " +
                        std::to_string(i));
    return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw DataError("config: " + key + " must be true/false");
}

}  // namespace detail

inline OLBPConfig OLBPConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    OLBPConfig c;
    if (auto it = kv.find("scale_preset"); it != kv.end()) {
        if (it->second == "paper") c = OLBPConfig::paper();
        else if (it->second == "toy") c = OLBPConfig::toy();
        else if (it->second == "custom") c.scale_preset = "custom";
        else throw DataError("config: unknown scale_preset " + it->second);
    }
    for (const auto& [key, value] : kv) {
        if (key == "scale_preset") continue;
        if (key.rfind("train_", 0) == 0) continue;  // trainer section, parsed elsewhere
        if (key == "input") {
            std::int64_t h, w, ch;
            char x1, x2;
            std::istringstream in(value);
            if (!(in >> h >> x1 >> w >> x2 >> ch) || x1 != 'x' || x2 != 'x')
                throw DataError("config: input must look like 288x288x3");
            c.input_h = h;
            c.input_w = w;
            c.input_c = ch;
        } else if (key == "block_channels") {
            c.block_channels = detail::parse_list<std::int64_t, 5>(value, key);
        } else if (key.rfind("olm_rates_", 0) == 0) {
            const int level = std::stoi(key.substr(10));
            if (level < 1 || level > 5) throw DataError("config: bad key " + key);
            c.olm_dilation_rates[std::size_t(level - 1)] = detail::parse_list<int, 4>(value, key);
        } else if (key == "olm_dilation_channels") {
            c.olm_dilation_channels = detail::parse_list<std::int64_t, 5>(value, key);
        } else if (key == "olm_conv2") {
            std::istringstream in(value);
            std::string item;
            std::size_t i = 0;
            while (std::getline(in, item, ',')) {
                if (i >= 5) throw DataError("config: too many olm_conv2 entries");
                const auto colon = item.find(':');
                if (colon == std::string::npos)
                    throw DataError("config: olm_conv2 entries look like kernel:channels");
                c.olm_conv2_kernel[i] = std::stoi(detail::trim(item.substr(0, colon)));
                c.olm_conv2_channels[i] = std::stoll(detail::trim(item.substr(colon + 1)));
                ++i;
            }
            if (i != 5) throw DataError("config: olm_conv2 needs 5 entries");
        } else if (key == "use_olm") {
            c.use_olm = detail::parse_bool(value, key);
        } else if (key == "use_bpm") {
            c.use_bpm = detail::parse_bool(value, key);
        } else if (key == "fdm_input_mode") {
            if (value == "olm") c.fdm_input_mode = FdmInputMode::olm;
            else if (value == "concat_at_input") c.fdm_input_mode = FdmInputMode::concat_at_input;
            else if (value == "per_scale_concat") c.fdm_input_mode = FdmInputMode::per_scale_concat;
            else throw DataError("config: unknown fdm_input_mode " + value);
        } else if (key == "olm_variant") {
            if (value == "full") c.olm_variant = OlmVariant::full;
            else if (value == "no_dilated") c.olm_variant = OlmVariant::no_dilated;
            else if (value == "no_multiply") c.olm_variant = OlmVariant::no_multiply;
            else if (value == "no_concat") c.olm_variant = OlmVariant::no_concat;
            else if (value == "no_seg_sup") c.olm_variant = OlmVariant::no_seg_sup;
            else throw DataError("config: unknown olm_variant " + value);
        } else if (key == "fdm_sigma") {
            c.fdm_sigma = std::stod(value);
        } else if (key == "rng_seed") {
            c.rng_seed = std::stoull(value);
        } else {
            throw DataError("config: unknown key " + key);
        }
    }
    c.validate();
    return c;
}

inline OLBPConfig OLBPConfig::parse_text(const std::string& text) {
    return from_key_values(detail::parse_key_values(text));
}

inline OLBPConfig OLBPConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

// Named ablation configurations used throughout the experiments.
//   full        the complete network
//   ba          encoder-decoder, density map concatenated at every skip
//   ba_star     encoder-decoder, image and density map concatenated at input
//   ba_olm      localization blocks only (no boundary decoder), aka no_bpm
//   ba_bpm      boundary decoder only, per-scale density concat
//   ba_star_bpm boundary decoder only, input-level concat
// plus the localization-block variants no_dilated/no_multiply/no_concat/no_seg_sup.
inline OLBPConfig apply_ablation(OLBPConfig c, const std::string& name) {
    auto off_olm = [&](FdmInputMode mode) {
        c.use_olm = false;
        c.fdm_input_mode = mode;
    };
    if (name == "full" || name.empty()) {
    } else if (name == "ba") {
        off_olm(FdmInputMode::per_scale_concat);
        c.use_bpm = false;
    } else if (name == "ba_star") {
        off_olm(FdmInputMode::concat_at_input);
        c.use_bpm = false;
    } else if (name == "ba_olm" || name == "no_bpm") {
        c.use_bpm = false;
    } else if (name == "ba_bpm") {
        off_olm(FdmInputMode::per_scale_concat);
    } else if (name == "ba_star_bpm") {
        off_olm(FdmInputMode::concat_at_input);
    } else if (name == "no_dilated") {
        c.olm_variant = OlmVariant::no_dilated;
    } else if (name == "no_multiply") {
        c.olm_variant = OlmVariant::no_multiply;
    } else if (name == "no_concat") {
        c.olm_variant = OlmVariant::no_concat;
    } else if (name == "no_seg_sup") {
        c.olm_variant = OlmVariant::no_seg_sup;
    } else {
        throw DataError("unknown ablation: " + name);
    }
    c.validate();
    return c;
}

}  // namespace olbp
