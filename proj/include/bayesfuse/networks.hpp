#pragma once

// Two-stream fusion generator and Markovian patch discriminator.
//
// Both networks are described by a flat table of LayerSpec rows and run
// through a single templated forward routine. The executor decides what a
// "value" is: a Shape (static shape trace), a Tensor (inference) or a Var
// (recorded on a Tape for training).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "ops.hpp"

namespace bayesfuse {

struct NetworkScale {
    std::size_t spatial = 64;      // PAN edge length S
    std::size_t bands = 4;         // MS band count B
    std::size_t width_divisor = 4; // divides every hidden channel count
    std::size_t scale_ratio = 4;   // PAN:MS spatial ratio

    static NetworkScale full() { return {400, 4, 1, 4}; }
    static NetworkScale desk() { return {64, 4, 4, 4}; }

    std::size_t ms_spatial() const { return spatial / scale_ratio; }

    /// Hidden width for a full-size channel count.
    std::size_t width(std::size_t full) const {
        if (width_divisor == 0 || full % width_divisor != 0)
            throw ConfigError("NetworkScale: channel count " + std::to_string(full) + " not divisible by width_divisor " +
                              std::to_string(width_divisor));
        return full / width_divisor;
    }

    void validate() const {
        if (scale_ratio != 4) throw ConfigError("NetworkScale: scale_ratio must be 4, got " + std::to_string(scale_ratio));
        if (spatial == 0 || spatial % 8 != 0)
            throw ConfigError("NetworkScale: spatial " + std::to_string(spatial) + " must be a positive multiple of 8");
        if (bands == 0) throw ConfigError("NetworkScale: bands must be positive");
        for (std::size_t c : {32u, 64u, 128u, 256u, 16u, 4u}) (void)width(c);
    }

    bool operator==(const NetworkScale&) const = default;
};

enum class LayerKind { Conv, UpConv };
enum class Activation { LeakyRelu, Tanh, Sigmoid };

inline constexpr double kLeakySlope = 0.2;

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    Padding2d pad;
    Activation act = Activation::LeakyRelu;

    Shape weight_shape() const {
        return kind == LayerKind::Conv ? Shape{out_channels, in_channels, kernel, kernel}
                                       : Shape{in_channels, out_channels, kernel, kernel};
    }
    std::size_t fan_in() const {
        return kind == LayerKind::Conv ? in_channels * kernel * kernel
                                       : in_channels * kernel * kernel / (stride * stride);
    }
};

/// Ordered (name, shape) list describing a flattened parameter vector.
struct ParamEntry {
    std::string name;
    Shape shape;
    bool operator==(const ParamEntry&) const = default;
};
using ParamLayout = std::vector<ParamEntry>;

inline std::size_t layout_size(const ParamLayout& layout) {
    std::size_t n = 0;
    for (const auto& e : layout) n += shape_numel(e.shape);
    return n;
}

/// Flat view of every weight and bias of one network, in layer order.
struct ParamVector {
    std::vector<double> values;
    ParamLayout layout;

    std::size_t size() const { return values.size(); }
    bool identical(const ParamVector& o) const {
        if (layout != o.layout || values.size() != o.values.size()) return false;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (std::bit_cast<std::uint64_t>(values[i]) != std::bit_cast<std::uint64_t>(o.values[i])) return false;
        return true;
    }
};

class Network {
public:
    Network() = default;
    explicit Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            index_.emplace(layers_[i].name, i);
            weights_.emplace_back(layers_[i].weight_shape());
            biases_.emplace_back(Shape{layers_[i].out_channels});
        }
    }

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::size_t layer_index(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw std::out_of_range("Network: no layer named " + std::string(name));
        return it->second;
    }
    const LayerSpec& layer(std::string_view name) const { return layers_[layer_index(name)]; }

    const Tensor& weight(std::size_t i) const { return weights_.at(i); }
    const Tensor& bias(std::size_t i) const { return biases_.at(i); }
    Tensor& weight(std::size_t i) { return weights_.at(i); }
    Tensor& bias(std::size_t i) { return biases_.at(i); }

    /// He-style fan-in Gaussian weights, zero biases; one stream in layer order.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(layers_[i].fan_in()));
            for (auto& w : weights_[i].data()) w = stddev * normal(rng);
            for (auto& b : biases_[i].data()) b = 0.0;
        }
    }

    ParamLayout layout() const {
        ParamLayout out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            out.push_back({layers_[i].name + ".weight", weights_[i].shape()});
            out.push_back({layers_[i].name + ".bias", biases_[i].shape()});
        }
        return out;
    }

    std::size_t parameter_count() const { return layout_size(layout()); }

    ParamVector flatten() const {
        ParamVector pv;
        pv.layout = layout();
        pv.values.reserve(layout_size(pv.layout));
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            pv.values.insert(pv.values.end(), weights_[i].values().begin(), weights_[i].values().end());
            pv.values.insert(pv.values.end(), biases_[i].values().begin(), biases_[i].values().end());
        }
        return pv;
    }

    void load(const ParamVector& pv) {
        if (pv.layout != layout()) throw ShapeError("Network::load: parameter layout does not match the network");
        if (pv.values.size() != layout_size(pv.layout))
            throw ShapeError("Network::load: parameter vector has " + std::to_string(pv.values.size()) +
                             " values, layout needs " + std::to_string(layout_size(pv.layout)));
        std::size_t off = 0;
        auto copy_into = [&](Tensor& t) {
            std::copy_n(pv.values.begin() + static_cast<std::ptrdiff_t>(off), t.numel(), t.data().begin());
            off += t.numel();
        };
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            copy_into(weights_[i]);
            copy_into(biases_[i]);
        }
    }

private:
    std::vector<LayerSpec> layers_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

// ------------------------------------------------------------------ layer tables

inline std::vector<LayerSpec> generator_layers(const NetworkScale& s) {
    s.validate();
    const auto w = [&](std::size_t c) { return s.width(c); };
    const Padding2d same{1, 1}, none{0, 0};
    auto conv3 = [&](std::string name, std::size_t in, std::size_t out) {
        return LayerSpec{std::move(name), LayerKind::Conv, in, out, 3, 1, same, Activation::LeakyRelu};
    };
    auto conv1 = [&](std::string name, std::size_t in, std::size_t out) {
        return LayerSpec{std::move(name), LayerKind::Conv, in, out, 1, 1, none, Activation::LeakyRelu};
    };
    auto down = [&](std::string name, std::size_t in, std::size_t out) {
        return LayerSpec{std::move(name), LayerKind::Conv, in, out, 2, 2, none, Activation::LeakyRelu};
    };
    auto up = [&](std::string name, std::size_t in, std::size_t out) {
        return LayerSpec{std::move(name), LayerKind::UpConv, in, out, 2, 2, none, Activation::LeakyRelu};
    };
    std::vector<LayerSpec> L;
    // Feature extraction, PAN stream (single-band input).
    L.push_back(conv3("Conv1_P", 1, w(32)));
    L.push_back(conv3("Conv2_P", w(32), w(32)));
    L.push_back(conv3("Conv3_P", w(32), w(32)));
    L.push_back(down("Down_Conv1", w(32), w(64)));
    // Feature extraction, MS stream.
    L.push_back(conv3("Conv1_M", s.bands, w(32)));
    L.push_back(conv3("Conv2_M", w(32), w(32)));
    L.push_back(conv3("Conv3_M", w(32), w(32)));
    L.push_back(up("Up_Conv1", w(32), w(64)));
    // Feature fusion.
    L.push_back(conv3("Conv4", w(64) + w(64), w(128)));
    L.push_back(conv3("Conv5", w(128), w(128)));
    L.push_back(conv3("Conv6", w(128), w(128)));
    L.push_back(down("Down_Conv2", w(128), w(256)));
    L.push_back(conv1("Conv7", w(256) + w(32), w(256)));
    L.push_back(conv3("Conv8", w(256), w(256)));
    L.push_back(conv3("Conv9", w(256), w(256)));
    // Image reconstruction.
    L.push_back(up("Up_Conv2", w(256), w(128)));
    L.push_back(conv1("Conv10", w(128) + w(128), w(256)));
    L.push_back(conv3("Conv11", w(256), w(256)));
    L.push_back(conv3("Conv12", w(256), w(256)));
    L.push_back(up("Up_Conv3", w(256), w(128)));
    L.push_back(conv1("Conv13", w(128) + w(32), w(64)));
    L.push_back(conv3("Conv14", w(64), w(64)));
    L.push_back(conv3("Conv15", w(64), w(64)));
    L.push_back(LayerSpec{"Conv16", LayerKind::Conv, w(64), s.bands, 3, 1, same, Activation::Tanh});
    return L;
}

inline std::vector<LayerSpec> discriminator_layers(const NetworkScale& s) {
    s.validate();
    if (s.spatial % 16 != 0)
        throw ConfigError("discriminator: spatial " + std::to_string(s.spatial) +
                          " must be a multiple of 16 (four stride-2 stages)");
    const auto w = [&](std::size_t c) { return s.width(c); };
    // Stride-2 3x3 stages pad one row/column after the data only, which halves
    // even extents exactly (400 -> 200 -> 100 -> 50 -> 25).
    const Padding2d halve{0, 1}, same{1, 1};
    return {
        {"Conv1", LayerKind::Conv, s.bands, w(64), 3, 2, halve, Activation::LeakyRelu},
        {"Conv2", LayerKind::Conv, w(64), w(16), 3, 2, halve, Activation::LeakyRelu},
        {"Conv3", LayerKind::Conv, w(16), w(4), 3, 2, halve, Activation::LeakyRelu},
        {"Conv4", LayerKind::Conv, w(4), w(4), 3, 2, halve, Activation::LeakyRelu},
        {"Conv5", LayerKind::Conv, w(4), 1, 3, 1, same, Activation::Sigmoid},
    };
}

struct Generator {
    NetworkScale scale;
    Network net;
};

struct Discriminator {
    NetworkScale scale;
    Network net;
};

inline Generator build_generator(const NetworkScale& scale, std::uint64_t seed) {
    Generator g{scale, Network(generator_layers(scale))};
    g.net.initialize(seed);
    return g;
}

inline Discriminator build_discriminator(const NetworkScale& scale, std::uint64_t seed) {
    Discriminator d{scale, Network(discriminator_layers(scale))};
    d.net.initialize(seed);
    return d;
}

inline ParamVector flatten(const Generator& g) { return g.net.flatten(); }
inline ParamVector flatten(const Discriminator& d) { return d.net.flatten(); }

inline Generator unflatten_generator(const ParamVector& pv, const NetworkScale& scale) {
    Generator g{scale, Network(generator_layers(scale))};
    g.net.load(pv);
    return g;
}

inline Discriminator unflatten_discriminator(const ParamVector& pv, const NetworkScale& scale) {
    Discriminator d{scale, Network(discriminator_layers(scale))};
    d.net.load(pv);
    return d;
}

// ------------------------------------------------------------------ executors

/// Propagates shapes only and records the output shape of every named stage.
class ShapeExecutor {
public:
    using Value = Shape;
    explicit ShapeExecutor(const Network& net) : net_(net) {}

    Value layer(std::string_view name, const Value& x) {
        const LayerSpec& s = net_.layer(name);
        const Shape ws = s.weight_shape();
        Shape y;
        if (s.kind == LayerKind::Conv) {
            const auto g = kernels::conv2d_geometry(x, ws, s.stride, s.pad);
            y = {g.batch, g.out_channels, g.out_h, g.out_w};
        } else {
            const auto g = kernels::conv2d_transpose_geometry(x, ws, s.stride);
            y = {g.batch, g.in_channels, g.in_h, g.in_w};
        }
        trace_.emplace_back(std::string(name), y);
        return y;
    }

    Value concat(std::string_view name, const Value& a, const Value& b) {
        if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
            throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(a) + " vs " + shape_str(b));
        Shape y{a[0], a[1] + b[1], a[2], a[3]};
        trace_.emplace_back(std::string(name), y);
        return y;
    }

    const std::vector<std::pair<std::string, Shape>>& trace() const { return trace_; }

private:
    const Network& net_;
    std::vector<std::pair<std::string, Shape>> trace_;
};

namespace detail {
template <class V>
V activate(const V& x, Activation act) {
    switch (act) {
    case Activation::LeakyRelu: return leaky_relu(x, kLeakySlope);
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    }
    throw std::logic_error("unknown activation");
}
} // namespace detail

/// Plain forward evaluation, no gradient bookkeeping.
class TensorExecutor {
public:
    using Value = Tensor;
    explicit TensorExecutor(const Network& net) : net_(net) {}

    Value layer(std::string_view name, const Value& x) const {
        const std::size_t i = net_.layer_index(name);
        const LayerSpec& s = net_.layers()[i];
        Tensor y = s.kind == LayerKind::Conv ? conv2d(x, net_.weight(i), net_.bias(i), s.stride, s.pad)
                                             : conv2d_transpose(x, net_.weight(i), net_.bias(i), s.stride);
        return detail::activate(y, s.act);
    }
    Value concat(std::string_view, const Value& a, const Value& b) const { return concat_channels(a, b); }

private:
    const Network& net_;
};

/// A network's parameters placed on a tape, either trainable or frozen.
class BoundNetwork {
public:
    BoundNetwork(Tape& tape, const Network& net, bool trainable) : net_(&net) {
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            weights_.push_back(trainable ? tape.parameter(net.weight(i)) : tape.constant(net.weight(i)));
            biases_.push_back(trainable ? tape.parameter(net.bias(i)) : tape.constant(net.bias(i)));
        }
    }

    const Network& network() const { return *net_; }
    const Var& weight(std::size_t i) const { return weights_.at(i); }
    const Var& bias(std::size_t i) const { return biases_.at(i); }

    /// Gradients of all parameters in flatten() order (zeros where none reached).
    std::vector<double> gradient(const GradientMap& grads) const {
        std::vector<double> out;
        out.reserve(net_->parameter_count());
        auto append = [&](const Var& v) {
            if (grads.contains(v.id())) {
                const auto& g = grads.at(v.id()).values();
                out.insert(out.end(), g.begin(), g.end());
            } else {
                out.insert(out.end(), v.value().numel(), 0.0);
            }
        };
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            append(weights_[i]);
            append(biases_[i]);
        }
        return out;
    }

private:
    const Network* net_;
    std::vector<Var> weights_;
    std::vector<Var> biases_;
};

class TapeExecutor {
public:
    using Value = Var;
    explicit TapeExecutor(const BoundNetwork& bound) : bound_(bound) {}

    Value layer(std::string_view name, const Value& x) const {
        const std::size_t i = bound_.network().layer_index(name);
        const LayerSpec& s = bound_.network().layers()[i];
        Var y = s.kind == LayerKind::Conv ? conv2d(x, bound_.weight(i), bound_.bias(i), s.stride, s.pad)
                                          : conv2d_transpose(x, bound_.weight(i), bound_.bias(i), s.stride);
        return detail::activate(y, s.act);
    }
    Value concat(std::string_view, const Value& a, const Value& b) const { return concat_channels(a, b); }

private:
    const BoundNetwork& bound_;
};

// ------------------------------------------------------------------ forward routines

/// Feature extraction -> feature fusion -> image reconstruction.
/// Skip sources: Concat2 <- Conv3_M, Concat3 <- Conv6, Concat4 <- Conv3_P.
template <class Exec>
typename Exec::Value run_generator(Exec& ex, const typename Exec::Value& pan, const typename Exec::Value& ms) {
    auto p = ex.layer("Conv1_P", pan);
    p = ex.layer("Conv2_P", p);
    const auto pan_features = ex.layer("Conv3_P", p);
    const auto pan_down = ex.layer("Down_Conv1", pan_features);

    auto m = ex.layer("Conv1_M", ms);
    m = ex.layer("Conv2_M", m);
    const auto ms_features = ex.layer("Conv3_M", m);
    const auto ms_up = ex.layer("Up_Conv1", ms_features);

    auto f = ex.concat("Concat1", pan_down, ms_up);
    f = ex.layer("Conv4", f);
    f = ex.layer("Conv5", f);
    const auto fused_mid = ex.layer("Conv6", f);
    f = ex.layer("Down_Conv2", fused_mid);
    f = ex.concat("Concat2", f, ms_features);
    f = ex.layer("Conv7", f);
    f = ex.layer("Conv8", f);
    f = ex.layer("Conv9", f);

    auto r = ex.layer("Up_Conv2", f);
    r = ex.concat("Concat3", r, fused_mid);
    r = ex.layer("Conv10", r);
    r = ex.layer("Conv11", r);
    r = ex.layer("Conv12", r);
    r = ex.layer("Up_Conv3", r);
    r = ex.concat("Concat4", r, pan_features);
    r = ex.layer("Conv13", r);
    r = ex.layer("Conv14", r);
    r = ex.layer("Conv15", r);
    return ex.layer("Conv16", r);
}

template <class Exec>
typename Exec::Value run_discriminator(Exec& ex, const typename Exec::Value& img) {
    auto x = ex.layer("Conv1", img);
    x = ex.layer("Conv2", x);
    x = ex.layer("Conv3", x);
    x = ex.layer("Conv4", x);
    return ex.layer("Conv5", x);
}

inline void check_generator_inputs(const NetworkScale& s, const Shape& pan, const Shape& ms) {
    if (pan.size() != 4 || pan[1] != 1 || pan[2] != s.spatial || pan[3] != s.spatial)
        throw ShapeError("generator: PAN must be Nx1x" + std::to_string(s.spatial) + "x" + std::to_string(s.spatial) +
                         ", got " + shape_str(pan));
    const std::size_t m = s.ms_spatial();
    if (ms.size() != 4 || ms[0] != pan[0] || ms[1] != s.bands || ms[2] != m || ms[3] != m)
        throw ShapeError("generator: MS must be " + std::to_string(pan[0]) + "x" + std::to_string(s.bands) + "x" +
                         std::to_string(m) + "x" + std::to_string(m) + ", got " + shape_str(ms));
}

inline void check_discriminator_input(const NetworkScale& s, const Shape& img) {
    if (img.size() != 4 || img[1] != s.bands || img[2] != s.spatial || img[3] != s.spatial)
        throw ShapeError("discriminator: image must be Nx" + std::to_string(s.bands) + "x" + std::to_string(s.spatial) +
                         "x" + std::to_string(s.spatial) + ", got " + shape_str(img));
}

inline Tensor generator_forward(const Generator& g, const Tensor& pan, const Tensor& ms) {
    check_generator_inputs(g.scale, pan.shape(), ms.shape());
    TensorExecutor ex(g.net);
    return run_generator(ex, pan, ms);
}

inline Var generator_forward(const BoundNetwork& g, const NetworkScale& scale, const Var& pan, const Var& ms) {
    check_generator_inputs(scale, pan.shape(), ms.shape());
    TapeExecutor ex(g);
    return run_generator(ex, pan, ms);
}

inline Tensor discriminator_forward(const Discriminator& d, const Tensor& img) {
    check_discriminator_input(d.scale, img.shape());
    TensorExecutor ex(d.net);
    return run_discriminator(ex, img);
}

inline Var discriminator_forward(const BoundNetwork& d, const NetworkScale& scale, const Var& img) {
    check_discriminator_input(scale, img.shape());
    TapeExecutor ex(d);
    return run_discriminator(ex, img);
}

/// (stage name, output shape) for every layer and concat, batch size 1.
inline std::vector<std::pair<std::string, Shape>> generator_shape_trace(const NetworkScale& s) {
    const Network net(generator_layers(s));
    ShapeExecutor ex(net);
    run_generator(ex, Shape{1, 1, s.spatial, s.spatial}, Shape{1, s.bands, s.ms_spatial(), s.ms_spatial()});
    return ex.trace();
}

inline std::vector<std::pair<std::string, Shape>> discriminator_shape_trace(const NetworkScale& s) {
    const Network net(discriminator_layers(s));
    ShapeExecutor ex(net);
    run_discriminator(ex, Shape{1, s.bands, s.spatial, s.spatial});
    return ex.trace();
}

// ------------------------------------------------------------------ checkpoints
//
// BGP1 layout (all integers little-endian):
//   "BGP1" | u32 entry_count | entries | u64 value_count | f64 values...
//   entry := u32 name_len | name bytes | u32 rank | u32 extents[rank]

inline void save_checkpoint(const ParamVector& pv, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write("BGP1", 4);
    binio::write_u32(os, static_cast<std::uint32_t>(pv.layout.size()));
    for (const auto& e : pv.layout) {
        binio::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        binio::write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
    }
    binio::write_u64(os, pv.values.size());
    for (double v : pv.values) binio::write_f64(os, v);
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

inline ParamVector load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    const std::string ctx = "load_checkpoint(" + path + ")";
    binio::expect_magic(is, "BGP1", ctx);
    ParamVector pv;
    const std::uint32_t entries = binio::read_u32(is, ctx);
    for (std::uint32_t i = 0; i < entries; ++i) {
        ParamEntry e;
        const std::uint32_t len = binio::read_u32(is, ctx);
        if (len > 4096) throw IoError(ctx + ": implausible layer name length");
        e.name.resize(len);
        is.read(e.name.data(), len);
        const std::uint32_t rank = binio::read_u32(is, ctx);
        if (rank > 8) throw IoError(ctx + ": implausible rank");
        for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(binio::read_u32(is, ctx));
        pv.layout.push_back(std::move(e));
    }
    const std::uint64_t count = binio::read_u64(is, ctx);
    if (count != layout_size(pv.layout)) throw IoError(ctx + ": value count does not match the layout");
    pv.values.resize(count);
    for (auto& v : pv.values) v = binio::read_f64(is, ctx);
    return pv;
}

} // namespace bayesfuse
