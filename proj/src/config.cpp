#include "uvsplat/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace uvsplat {

namespace {

struct Field {
    const char* key;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

long long to_int(const std::string& s) {
    long long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("not an integer");
    return v;
}

std::uint64_t to_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("not an unsigned integer");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("not a boolean");
}

#define UVS_DOUBLE(name, member) \
    Field{name, [](const Config& c) { return fmt(c.member); }, [](Config& c, const std::string& v) { c.member = to_double(v); }}
#define UVS_INT(name, member)                                                   \
    Field{name, [](const Config& c) { return std::to_string(c.member); },      \
          [](Config& c, const std::string& v) { c.member = static_cast<int>(to_int(v)); }}
#define UVS_U64(name, member) \
    Field{name, [](const Config& c) { return std::to_string(c.member); }, [](Config& c, const std::string& v) { c.member = to_u64(v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        Field{"mesh", [](const Config& c) { return c.mesh; }, [](Config& c, const std::string& v) { c.mesh = v; }},
        UVS_INT("K", K),
        UVS_INT("dense_w", dense_w),
        UVS_INT("dense_h", dense_h),
        UVS_INT("hair_w", hair_w),
        UVS_INT("hair_h", hair_h),
        Field{"include_vertices", [](const Config& c) { return std::string(c.include_vertices ? "true" : "false"); },
              [](Config& c, const std::string& v) { c.include_vertices = to_bool(v); }},
        UVS_INT("resolution", resolution),
        UVS_INT("window", window),
        UVS_INT("scales", scales),
        UVS_INT("layers", layers),
        UVS_INT("fusion_channels", fusion_channels),
        UVS_DOUBLE("theta_occ", theta_occ),
        UVS_DOUBLE("visibility_tau", visibility_tau),
        UVS_U64("fusion_seed", fusion_seed),
        UVS_DOUBLE("lambda_photo", weights.photo),
        UVS_DOUBLE("lambda_alpha", weights.alpha),
        UVS_DOUBLE("lambda_3d", weights.l3d),
        UVS_DOUBLE("lambda_uv", weights.uv),
        UVS_DOUBLE("lambda_eye", weights.eye),
        UVS_DOUBLE("lambda_pos", weights.pos),
        UVS_DOUBLE("lambda_shape", weights.shape),
        UVS_DOUBLE("lambda_shape_tv", weights.shape_tv),
        UVS_DOUBLE("epsilon", weights.epsilon),
        UVS_DOUBLE("delta_alpha", weights.delta_alpha),
        UVS_DOUBLE("alpha_mask", weights.alpha_mask),
        UVS_INT("iterations", iterations),
        UVS_DOUBLE("lr", lr),
        UVS_DOUBLE("lr_shape", lr_shape),
        UVS_DOUBLE("beta1", beta1),
        UVS_DOUBLE("beta2", beta2),
        UVS_DOUBLE("adam_eps", adam_eps),
        UVS_DOUBLE("init_scale", init_scale),
        UVS_DOUBLE("init_opacity", init_opacity),
        UVS_DOUBLE("init_noise", init_noise),
        UVS_U64("seed", seed),
        UVS_INT("threads", threads),
    };
    return f;
}

#undef UVS_DOUBLE
#undef UVS_INT
#undef UVS_U64

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void Config::validate() const {
    if (K < 4) throw ValidationError("config: K must be at least 4");
    if (dense_w < 0 || dense_h < 0 || hair_w < 0 || hair_h < 0) throw ValidationError("config: grid sizes must be >= 0");
    if (resolution < 1) throw ValidationError("config: resolution must be positive");
    if (window < 1 || window % 2 == 0) throw ValidationError("config: window must be odd");
    if (scales < 1 || K % (1 << (scales - 1)) != 0) throw ValidationError("config: K must be divisible by 2^(scales-1)");
    if (layers < 0 || fusion_channels < 1) throw ValidationError("config: invalid fusion layer or channel count");
    if (!(visibility_tau >= 0)) throw ValidationError("config: visibility_tau must be >= 0");
    if (iterations < 0) throw ValidationError("config: iterations must be >= 0");
    if (!(lr > 0) || !(lr_shape >= 0)) throw ValidationError("config: step sizes must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
        throw ValidationError("config: invalid moment coefficients");
    }
    if (!(init_opacity > 0 && init_opacity < 1) || !(init_scale > 0)) throw ValidationError("config: invalid init");
    if (threads < 0) throw ValidationError("config: threads must be >= 0");
    weights.validate();
}

GridSpec Config::grid() const { return {dense_w, dense_h, hair_w, hair_h, include_vertices}; }

FitConfig Config::fit_config() const {
    FitConfig f;
    f.iterations = iterations;
    f.lr = lr;
    f.lr_shape = lr_shape;
    f.beta1 = beta1;
    f.beta2 = beta2;
    f.adam_eps = adam_eps;
    f.weights = weights;
    f.K = K;
    f.grid = grid();
    f.seed = seed;
    f.init_scale = init_scale;
    f.init_opacity = init_opacity;
    f.init_noise = init_noise;
    return f;
}

FusionConfig Config::fusion_config() const { return {window, scales, layers, theta_occ, fusion_seed}; }

Config parse_config(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(n) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.key) field = &f;
        if (!field) throw ValidationError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
        try {
            field->set(c, value);
        } catch (const std::exception&) {
            throw ValidationError("config line " + std::to_string(n) + ": bad value for '" + key + "': '" + value + "'");
        }
    }
    c.validate();
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const Config& c) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
    return out;
}

} // namespace uvsplat
