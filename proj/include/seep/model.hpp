#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "seep/autodiff.hpp"
#include "seep/common.hpp"
#include "seep/field_io.hpp"
#include "seep/grid.hpp"
#include "seep/rng.hpp"

namespace seep {

// ============================================================================
// Encoder-decoder surrogate: input (ln K, normalized time) as 2 channels,
// output one head image. The network predicts in a scaled range; real heads
// are h = h_right + (h_left - h_right) * net_out, applied inside the graph.
// ============================================================================

struct ConvStage {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
};

struct DeconvStage {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int output_padding = 0;
};

struct ModelConfig {
    std::vector<ConvStage> encoder;
    std::vector<DeconvStage> decoder;
    std::string activation = "swish";

    // Small enough to train on one CPU core while keeping the 2-in/1-out
    // channel contract; strides reach 13x13 at the bottleneck for a 51x51
    // case and the output paddings land exactly back on the input extent.
    static ModelConfig default_for(const CaseSpec&) {
        ModelConfig cfg;
        cfg.encoder = {{16, 3, 1, 1}, {32, 3, 2, 1}, {64, 3, 2, 1}};
        cfg.decoder = {{32, 3, 2, 1, 1}, {16, 3, 2, 1, 0}, {1, 3, 1, 1, 0}};
        return cfg;
    }
};

inline nlohmann::json to_json(const ModelConfig& cfg) {
    nlohmann::json enc = nlohmann::json::array();
    for (const auto& s : cfg.encoder) enc.push_back({s.out_channels, s.kernel, s.stride, s.padding});
    nlohmann::json dec = nlohmann::json::array();
    for (const auto& s : cfg.decoder)
        dec.push_back({s.out_channels, s.kernel, s.stride, s.padding, s.output_padding});
    return nlohmann::json{{"encoder", enc}, {"decoder", dec}, {"activation", cfg.activation}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    check_keys(j, {"encoder", "decoder", "activation"}, "model config");
    ModelConfig cfg;
    cfg.encoder.clear();
    cfg.decoder.clear();
    for (const auto& s : j.at("encoder")) {
        if (!s.is_array() || s.size() != 4)
            throw ConfigError("model config: encoder stage must be [channels, kernel, stride, padding]");
        cfg.encoder.push_back({s[0].get<int>(), s[1].get<int>(), s[2].get<int>(), s[3].get<int>()});
    }
    for (const auto& s : j.at("decoder")) {
        if (!s.is_array() || s.size() != 5)
            throw ConfigError(
                "model config: decoder stage must be [channels, kernel, stride, padding, output_padding]");
        cfg.decoder.push_back(
            {s[0].get<int>(), s[1].get<int>(), s[2].get<int>(), s[3].get<int>(), s[4].get<int>()});
    }
    if (j.contains("activation")) cfg.activation = j.at("activation").get<std::string>();
    if (cfg.activation != "swish")
        throw ConfigError("model config: unsupported activation \"" + cfg.activation + "\"");
    return cfg;
}

class Model {
public:
    Model() = default;

    const CaseSpec& spec() const { return spec_; }
    const ModelConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<std::string>& param_names() const { return names_; }

    double out_offset() const { return out_offset_; }
    double out_scale() const { return out_scale_; }

    /// Runs the network on a (B, 2, ny, nx) input and returns real-unit
    /// heads (B, 1, ny, nx). With train=false the graph is not retained.
    Tensor forward(const Tensor& input, bool train) const {
        const Shape s = input.shape();
        if (s.c != 2 || s.h != spec_.ny || s.w != spec_.nx)
            throw ShapeError("Model::forward: expected Bx2x" + std::to_string(spec_.ny) + "x" +
                             std::to_string(spec_.nx) + " input, got " + s.str());
        std::vector<Tensor> p;
        p.reserve(params_.size());
        if (train) {
            p = params_;
        } else {
            for (const Tensor& t : params_) p.push_back(Tensor::constant(t.shape(), t.values()));
        }
        Tensor x = input;
        std::size_t pi = 0;
        const std::size_t total = config_.encoder.size() + config_.decoder.size();
        std::size_t stage = 0;
        for (const ConvStage& st : config_.encoder) {
            x = conv2d(x, p[pi], p[pi + 1], st.stride, st.padding);
            pi += 2;
            if (++stage < total) x = swish(x);
        }
        for (const DeconvStage& st : config_.decoder) {
            x = conv2d_transposed(x, p[pi], p[pi + 1], st.stride, st.padding, st.output_padding);
            pi += 2;
            if (++stage < total) x = swish(x);
        }
        return add_scalar(scale(x, out_scale_), out_offset_);
    }

    friend Model build_model(const ModelConfig&, const CaseSpec&, std::uint64_t);
    friend Model load_checkpoint(const std::filesystem::path&);

private:
    CaseSpec spec_;
    ModelConfig config_;
    std::uint64_t seed_ = 0;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    double out_offset_ = 0.0;
    double out_scale_ = 1.0;
};

/// Allocates and deterministically initializes the parameter tensors
/// (Glorot-uniform weights, zero biases) after validating that the stage
/// arithmetic maps 2 x ny x nx onto 1 x ny x nx.
inline Model build_model(const ModelConfig& cfg, const CaseSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (cfg.encoder.empty() && cfg.decoder.empty())
        throw ConfigError("build_model: empty architecture");
    if (cfg.activation != "swish")
        throw ConfigError("build_model: unsupported activation \"" + cfg.activation + "\"");

    int ch = 2, h = spec.ny, w = spec.nx;
    int stage_no = 0;
    for (const ConvStage& st : cfg.encoder) {
        require(st.out_channels > 0 && st.kernel > 0 && st.stride >= 1 && st.padding >= 0,
                "build_model: bad encoder stage " + std::to_string(stage_no));
        h = (h + 2 * st.padding - st.kernel) / st.stride + 1;
        w = (w + 2 * st.padding - st.kernel) / st.stride + 1;
        if (h <= 0 || w <= 0)
            throw ConfigError("build_model: encoder stage " + std::to_string(stage_no) +
                              " collapses the image");
        ch = st.out_channels;
        ++stage_no;
    }
    for (const DeconvStage& st : cfg.decoder) {
        require(st.out_channels > 0 && st.kernel > 0 && st.stride >= 1 && st.padding >= 0 &&
                    st.output_padding >= 0 && st.output_padding < st.stride,
                "build_model: bad decoder stage " + std::to_string(stage_no));
        h = (h - 1) * st.stride - 2 * st.padding + st.kernel + st.output_padding;
        w = (w - 1) * st.stride - 2 * st.padding + st.kernel + st.output_padding;
        if (h <= 0 || w <= 0)
            throw ConfigError("build_model: decoder stage " + std::to_string(stage_no) +
                              " collapses the image");
        ch = st.out_channels;
        ++stage_no;
    }
    if (ch != 1 || h != spec.ny || w != spec.nx)
        throw ConfigError("build_model: network yields " + std::to_string(ch) + "x" +
                          std::to_string(h) + "x" + std::to_string(w) + " for a 1x" +
                          std::to_string(spec.ny) + "x" + std::to_string(spec.nx) +
                          " target (check the last stage)");

    Model m;
    m.spec_ = spec;
    m.config_ = cfg;
    m.seed_ = seed;
    m.out_offset_ = spec.h_right;
    m.out_scale_ = spec.h_left - spec.h_right;
    if (std::abs(m.out_scale_) < 1e-9) m.out_scale_ = 1.0;

    Rng rng(seed, Stream::ParamInit);
    auto glorot = [&rng](Shape s, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::vector<double> v(s.count());
        for (double& x : v) x = rng.uniform(-bound, bound);
        return Tensor::variable(s, std::move(v));
    };

    int in_ch = 2;
    int idx = 0;
    for (const ConvStage& st : cfg.encoder) {
        const Shape ks{st.out_channels, in_ch, st.kernel, st.kernel};
        m.params_.push_back(glorot(ks, in_ch * st.kernel * st.kernel,
                                   st.out_channels * st.kernel * st.kernel));
        m.names_.push_back("enc" + std::to_string(idx) + ".weight");
        m.params_.push_back(Tensor::variable(Shape{1, 1, 1, st.out_channels},
                                             std::vector<double>(st.out_channels, 0.0)));
        m.names_.push_back("enc" + std::to_string(idx) + ".bias");
        in_ch = st.out_channels;
        ++idx;
    }
    idx = 0;
    for (const DeconvStage& st : cfg.decoder) {
        const Shape ks{in_ch, st.out_channels, st.kernel, st.kernel};
        m.params_.push_back(glorot(ks, in_ch * st.kernel * st.kernel,
                                   st.out_channels * st.kernel * st.kernel));
        m.names_.push_back("dec" + std::to_string(idx) + ".weight");
        m.params_.push_back(Tensor::variable(Shape{1, 1, 1, st.out_channels},
                                             std::vector<double>(st.out_channels, 0.0)));
        m.names_.push_back("dec" + std::to_string(idx) + ".bias");
        in_ch = st.out_channels;
        ++idx;
    }
    return m;
}

/// Stacks [ln K, time channel] and runs one forward pass.
inline Tensor model_input(const CaseSpec& spec, const std::vector<const ScalarField2D*>& lnk,
                          const std::vector<int>& step_index) {
    require(lnk.size() == step_index.size() && !lnk.empty(), "model_input: batch mismatch");
    const std::size_t plane = static_cast<std::size_t>(spec.ny) * spec.nx;
    std::vector<double> v(lnk.size() * 2 * plane);
    for (std::size_t b = 0; b < lnk.size(); ++b) {
        require_shape(*lnk[b], spec, "model_input");
        if (step_index[b] < 0 || step_index[b] > spec.nt)
            throw std::out_of_range("model_input: step index out of range");
        const double t = static_cast<double>(step_index[b]) / spec.nt;
        double* k_ch = v.data() + b * 2 * plane;
        double* t_ch = k_ch + plane;
        for (std::size_t i = 0; i < plane; ++i) k_ch[i] = lnk[b]->v[i];
        for (std::size_t i = 0; i < plane; ++i) t_ch[i] = t;
    }
    return Tensor::constant(Shape{static_cast<int>(lnk.size()), 2, spec.ny, spec.nx}, std::move(v));
}

inline ScalarField2D predict_head(const Model& model, const ScalarField2D& lnk, int step_index) {
    const CaseSpec& spec = model.spec();
    Tensor out = model.forward(model_input(spec, {&lnk}, {step_index}), /*train=*/false);
    ScalarField2D f(spec.ny, spec.nx);
    f.v = out.values();
    for (int i = 0; i < spec.ny; ++i)
        for (int j = 0; j < spec.nx; ++j)
            if (!std::isfinite(f.at(i, j)))
                throw NumericError("predict_head: non-finite head at cell (" + std::to_string(i) +
                                   ", " + std::to_string(j) + ")");
    return f;
}

/// snapshots[0] is the exact initial condition; snapshots 1..nt come from
/// one batched forward pass (bitwise identical to per-step predict_head).
inline HeadSeries rollout(const Model& model, const ScalarField2D& lnk) {
    const CaseSpec& spec = model.spec();
    HeadSeries series;
    series.snapshots.reserve(spec.nt + 1);
    series.snapshots.push_back(initial_head(spec));

    std::vector<const ScalarField2D*> fields(spec.nt, &lnk);
    std::vector<int> steps(spec.nt);
    for (int n = 1; n <= spec.nt; ++n) steps[n - 1] = n;
    Tensor out = model.forward(model_input(spec, fields, steps), /*train=*/false);

    const std::size_t plane = static_cast<std::size_t>(spec.ny) * spec.nx;
    for (int n = 1; n <= spec.nt; ++n) {
        ScalarField2D f(spec.ny, spec.nx);
        std::copy_n(out.values().begin() + (n - 1) * plane, plane, f.v.begin());
        for (double x : f.v)
            if (!std::isfinite(x))
                throw NumericError("rollout: non-finite head at step " + std::to_string(n));
        series.snapshots.push_back(std::move(f));
    }
    return series;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json (config + seed + ordered tensor names/shapes)
// next to weights.bin (concatenated little-endian IEEE-754 doubles).
// ---------------------------------------------------------------------------

inline void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint format assumes a little-endian host");
    std::filesystem::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const Shape s = model.params()[i].shape();
        tensors.push_back({{"name", model.param_names()[i]}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    nlohmann::json manifest{
        {"schema_version", 1},
        {"seed", model.seed()},
        {"case", to_json(model.spec())},
        {"model", to_json(model.config())},
        {"tensors", tensors},
    };
    write_json(manifest, dir / "manifest.json");

    std::ofstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open for writing: " + (dir / "weights.bin").string());
    for (const Tensor& p : model.params())
        bin.write(reinterpret_cast<const char*>(p.values().data()),
                  static_cast<std::streamsize>(p.values().size() * sizeof(double)));
    if (!bin) throw IoError("write failed: " + (dir / "weights.bin").string());
}

inline Model load_checkpoint(const std::filesystem::path& dir) {
    const nlohmann::json manifest = read_json(dir / "manifest.json");
    check_keys(manifest, {"schema_version", "seed", "case", "model", "tensors"}, "checkpoint manifest");
    const CaseSpec spec = case_from_json(manifest.at("case"));
    const ModelConfig cfg = model_config_from_json(manifest.at("model"));
    Model m = build_model(cfg, spec, manifest.at("seed").get<std::uint64_t>());

    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != m.params_.size())
        throw IoError("checkpoint corrupt: manifest lists " + std::to_string(tensors.size()) +
                      " tensors, model has " + std::to_string(m.params_.size()));
    std::size_t total = 0;
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        const std::string name = tensors[i].at("name").get<std::string>();
        if (name != m.names_[i])
            throw IoError("checkpoint corrupt: unknown tensor name \"" + name + "\" (expected \"" +
                          m.names_[i] + "\")");
        const auto sh = tensors[i].at("shape");
        const Shape want = m.params_[i].shape();
        if (sh.size() != 4 || sh[0] != want.n || sh[1] != want.c || sh[2] != want.h || sh[3] != want.w)
            throw IoError("checkpoint corrupt: shape mismatch for \"" + name + "\"");
        total += want.count();
    }

    std::ifstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open for reading: " + (dir / "weights.bin").string());
    bin.seekg(0, std::ios::end);
    const std::size_t bytes = static_cast<std::size_t>(bin.tellg());
    if (bytes != total * sizeof(double))
        throw IoError("checkpoint corrupt: weights.bin holds " + std::to_string(bytes / sizeof(double)) +
                      " values, manifest expects " + std::to_string(total));
    bin.seekg(0);
    for (Tensor& p : m.params_) {
        bin.read(reinterpret_cast<char*>(p.mutable_values().data()),
                 static_cast<std::streamsize>(p.values().size() * sizeof(double)));
        if (!bin) throw IoError("checkpoint corrupt: short read from weights.bin");
    }
    return m;
}

} // namespace seep
