#include "tkil/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <sstream>

#include "tkil/errors.hpp"
#include "tkil/rng.hpp"

namespace tkil {

namespace {

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden;
};

struct CnnSpec {
    int channels = 0, height = 0, width = 0;
    // fixed plan: conv1 pool conv2 pool conv3 conv4 pool
    std::array<int, 4> conv_channels = {6, 12, 16, 16};
    int feature_dim() const { return conv_channels[3] * (height / 8) * (width / 8); }
};

bool is_mlp(const std::string& arch) { return arch.rfind("mlp:", 0) == 0; }
bool is_cnn(const std::string& arch) { return arch.rfind("cnn:", 0) == 0; }

MlpSpec parse_mlp(const std::string& arch) {
    MlpSpec s;
    std::stringstream ss(arch.substr(4));
    std::string tok;
    if (!std::getline(ss, tok, ':')) throw ConfigInvalid("bad arch id " + arch);
    s.input_dim = std::stoi(tok);
    if (!std::getline(ss, tok)) throw ConfigInvalid("bad arch id " + arch);
    std::stringstream hs(tok);
    while (std::getline(hs, tok, ',')) s.hidden.push_back(std::stoi(tok));
    if (s.input_dim <= 0 || s.hidden.empty()) throw ConfigInvalid("bad arch id " + arch);
    for (int h : s.hidden)
        if (h <= 0) throw ConfigInvalid("bad arch id " + arch);
    return s;
}

CnnSpec parse_cnn(const std::string& arch) {
    CnnSpec s;
    char x1 = 0, x2 = 0;
    std::stringstream ss(arch.substr(4));
    ss >> s.channels >> x1 >> s.height >> x2 >> s.width;
    if (!ss || x1 != 'x' || x2 != 'x' || s.channels <= 0 || s.height < 16 || s.width < 16)
        throw ConfigInvalid("bad arch id " + arch);
    return s;
}

int feature_dim_of(const std::string& arch) {
    if (is_mlp(arch)) return parse_mlp(arch).hidden.back();
    if (is_cnn(arch)) return parse_cnn(arch).feature_dim();
    throw ConfigInvalid("unknown arch id " + arch);
}

Tensor init_weight(std::vector<int> shape, int fan_in, uint64_t seed, const std::string& name) {
    Tensor t = Tensor::zeros(std::move(shape));
    auto rng = make_rng(mix_seed(seed, fnv1a64(name)));
    const double scale = std::sqrt(1.0 / std::max(1, fan_in));
    for (auto& v : t.data) v = rand_gauss(rng) * scale;
    return t;
}

// ---- cached index maps for conv/permute gathers (keyed on dims only) ----

using MapKey = std::array<int, 4>;
ad::IndexMap cached_map(std::map<MapKey, ad::IndexMap>& cache, const MapKey& key,
                        const std::function<std::vector<int64_t>()>& build) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto m = std::make_shared<const std::vector<int64_t>>(build());
    cache.emplace(key, m);
    return m;
}

ad::IndexMap im2col_map(int B, int C, int H, int W) { // 3x3 kernel, pad 1, stride 1
    static std::map<MapKey, ad::IndexMap> cache;
    return cached_map(cache, {B, C, H, W}, [=]() {
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(B) * H * W * C * 9);
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < 3; ++kh)
                            for (int kw = 0; kw < 3; ++kw) {
                                const int y = i + kh - 1, x = j + kw - 1;
                                idx.push_back(y < 0 || y >= H || x < 0 || x >= W
                                                  ? -1
                                                  : ((static_cast<int64_t>(b) * C + c) * H + y) * W + x);
                            }
        return idx;
    });
}

ad::IndexMap rows_to_nchw_map(int B, int OC, int H, int W) {
    static std::map<MapKey, ad::IndexMap> cache;
    return cached_map(cache, {B, OC, H, W}, [=]() {
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(B) * OC * H * W);
        for (int b = 0; b < B; ++b)
            for (int oc = 0; oc < OC; ++oc)
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        idx.push_back((static_cast<int64_t>(b) * H + i) * W * OC +
                                      static_cast<int64_t>(j) * OC + oc);
        return idx;
    });
}

ad::NodePtr conv3x3(const ad::NodePtr& x, const ad::NodePtr& w, const ad::NodePtr& b) {
    const int B = x->shape()[0], C = x->shape()[1], H = x->shape()[2], W = x->shape()[3];
    const int OC = w->shape()[0];
    auto patches = ad::gather(x, im2col_map(B, C, H, W), {B * H * W, C * 9});
    auto rows = ad::add_rows(ad::matmul(patches, ad::transpose(ad::reshape(w, {OC, C * 9}))), b);
    return ad::gather(rows, rows_to_nchw_map(B, OC, H, W), {B, OC, H, W});
}

// 2x2 stride-2 max pooling; the argmax choice is a constant of the input
// values, like a relu mask, so gradients flow to the winning cell only.
ad::NodePtr maxpool2(const ad::NodePtr& x) {
    const int B = x->shape()[0], C = x->shape()[1], H = x->shape()[2], W = x->shape()[3];
    const int OH = H / 2, OW = W / 2;
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(B) * C * OH * OW);
    const auto& v = x->value.data;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * H * W;
            for (int i = 0; i < OH; ++i)
                for (int j = 0; j < OW; ++j) {
                    int64_t best = base + static_cast<int64_t>(2 * i) * W + 2 * j;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const int64_t cand =
                                base + static_cast<int64_t>(2 * i + di) * W + (2 * j + dj);
                            if (v[static_cast<size_t>(cand)] > v[static_cast<size_t>(best)])
                                best = cand;
                        }
                    idx->push_back(best);
                }
        }
    return ad::gather(x, idx, {B, C, OH, OW});
}

} // namespace

int ModelState::index_of(const std::string& name) const {
    for (size_t i = 0; i < weights.size(); ++i)
        if (weights[i].name == name) return static_cast<int>(i);
    throw LayoutMismatch("model has no array named " + name);
}

Tensor& ModelState::array(const std::string& name) {
    return weights[static_cast<size_t>(index_of(name))].value;
}

const Tensor& ModelState::array(const std::string& name) const {
    return weights[static_cast<size_t>(index_of(name))].value;
}

std::string feature_layer_name(const ModelState& m) {
    if (is_mlp(m.arch_id))
        return "phi.w" + std::to_string(parse_mlp(m.arch_id).hidden.size());
    if (is_cnn(m.arch_id)) return "phi.conv4.w";
    throw ConfigInvalid("unknown arch id " + m.arch_id);
}

std::vector<int> model_input_shape(const ModelState& m) {
    if (is_mlp(m.arch_id)) return {parse_mlp(m.arch_id).input_dim};
    const CnnSpec s = parse_cnn(m.arch_id);
    return {s.channels, s.height, s.width};
}

ModelState make_model(const std::string& arch_id, int head_width, uint64_t seed) {
    if (head_width < 0) throw ConfigInvalid("head_width must be non-negative");
    ModelState m;
    m.arch_id = arch_id;
    m.head_width = 0;
    if (is_mlp(arch_id)) {
        const MlpSpec s = parse_mlp(arch_id);
        int prev = s.input_dim;
        for (size_t k = 0; k < s.hidden.size(); ++k) {
            const int h = s.hidden[k];
            const std::string tag = std::to_string(k + 1);
            m.weights.push_back({"phi.w" + tag, init_weight({h, prev}, prev, seed, "phi.w" + tag), true});
            m.weights.push_back({"phi.b" + tag, Tensor::zeros({h}), true});
            prev = h;
        }
    } else if (is_cnn(arch_id)) {
        const CnnSpec s = parse_cnn(arch_id);
        int prev = s.channels;
        for (int k = 0; k < 4; ++k) {
            const int oc = s.conv_channels[static_cast<size_t>(k)];
            const std::string tag = "phi.conv" + std::to_string(k + 1);
            m.weights.push_back({tag + ".w", init_weight({oc, prev, 3, 3}, prev * 9, seed, tag + ".w"), true});
            m.weights.push_back({tag + ".b", Tensor::zeros({oc}), true});
            prev = oc;
        }
    } else {
        throw ConfigInvalid("unknown arch id " + arch_id);
    }
    const int fdim = feature_dim_of(arch_id);
    m.weights.push_back({"theta.head.w", Tensor::zeros({0, fdim}), false});
    m.weights.push_back({"theta.head.b", Tensor::zeros({0}), false});
    if (head_width > 0) m = grow_head(m, head_width, seed);
    return m;
}

ForwardGraph forward_graph(const ModelState& m, const Tensor& x) {
    const auto expect = model_input_shape(m);
    if (x.ndim() != static_cast<int>(expect.size()) + 1 ||
        !std::equal(expect.begin(), expect.end(), x.shape.begin() + 1))
        throw ShapeMismatch("input " + shape_str(x.shape) + " does not match arch " + m.arch_id);

    ForwardGraph fg;
    for (const auto& w : m.weights) {
        auto node = ad::leaf(w.value);
        fg.params.push_back(node);
        fg.by_name[w.name] = node;
    }
    auto xin = ad::constant(x);
    if (is_mlp(m.arch_id)) {
        const MlpSpec s = parse_mlp(m.arch_id);
        auto a = xin;
        for (size_t k = 1; k <= s.hidden.size(); ++k) {
            const std::string tag = std::to_string(k);
            a = ad::tanh_op(ad::add_rows(ad::matmul(a, ad::transpose(fg.by_name.at("phi.w" + tag))),
                                         fg.by_name.at("phi.b" + tag)));
        }
        fg.features = a;
    } else {
        const CnnSpec s = parse_cnn(m.arch_id);
        auto a = xin;
        a = maxpool2(ad::relu(conv3x3(a, fg.by_name.at("phi.conv1.w"), fg.by_name.at("phi.conv1.b"))));
        a = maxpool2(ad::relu(conv3x3(a, fg.by_name.at("phi.conv2.w"), fg.by_name.at("phi.conv2.b"))));
        a = ad::relu(conv3x3(a, fg.by_name.at("phi.conv3.w"), fg.by_name.at("phi.conv3.b")));
        a = maxpool2(ad::relu(conv3x3(a, fg.by_name.at("phi.conv4.w"), fg.by_name.at("phi.conv4.b"))));
        fg.features = ad::reshape(a, {x.shape[0], s.feature_dim()});
    }
    fg.logits = ad::add_rows(ad::matmul(fg.features, ad::transpose(fg.by_name.at("theta.head.w"))),
                             fg.by_name.at("theta.head.b"));
    return fg;
}

std::pair<Tensor, Tensor> forward(const ModelState& m, const Tensor& x) {
    ad::NoGradGuard guard;
    auto fg = forward_graph(m, x);
    return {fg.features->value, fg.logits->value};
}

ModelState grow_head(const ModelState& m, int new_classes, uint64_t seed, double init_scale) {
    if (new_classes <= 0) throw ConfigInvalid("new_classes must be positive");
    ModelState out = m;
    Tensor& w = out.array("theta.head.w");
    Tensor& b = out.array("theta.head.b");
    const int fdim = w.shape[1];
    const int old_width = m.head_width;
    Tensor nw = Tensor::zeros({old_width + new_classes, fdim});
    std::copy(w.data.begin(), w.data.end(), nw.data.begin());
    Tensor nb = Tensor::zeros({old_width + new_classes});
    std::copy(b.data.begin(), b.data.end(), nb.data.begin());
    for (int r = old_width; r < old_width + new_classes; ++r) {
        auto rng = make_rng(mix_seed(seed, 0x68656164ull, static_cast<uint64_t>(r)));
        for (int j = 0; j < fdim; ++j)
            nw.data[static_cast<size_t>(r) * fdim + j] = rand_gauss(rng) * init_scale;
        nb.data[static_cast<size_t>(r)] = rand_gauss(rng) * init_scale;
    }
    w = std::move(nw);
    b = std::move(nb);
    out.head_width = old_width + new_classes;
    return out;
}

ModelState average_weights(const std::vector<ModelState>& models) {
    if (models.empty()) throw HeterogeneousModels("cannot average zero models");
    const ModelState& first = models.front();
    for (const auto& m : models) {
        if (m.arch_id != first.arch_id || m.head_width != first.head_width ||
            m.weights.size() != first.weights.size())
            throw HeterogeneousModels("models differ in arch or head width");
        for (size_t i = 0; i < m.weights.size(); ++i)
            if (m.weights[i].name != first.weights[i].name ||
                m.weights[i].value.shape != first.weights[i].value.shape)
                throw HeterogeneousModels("models differ in weight layout");
    }
    ModelState out = first;
    const double inv_n = 1.0 / static_cast<double>(models.size());
    std::vector<double> diffs(models.size());
    for (size_t i = 0; i < out.weights.size(); ++i) {
        auto& dst = out.weights[i].value.data;
        for (size_t j = 0; j < dst.size(); ++j) {
            double mn = models[0].weights[i].value.data[j];
            for (size_t k = 1; k < models.size(); ++k)
                mn = std::min(mn, models[k].weights[i].value.data[j]);
            for (size_t k = 0; k < models.size(); ++k)
                diffs[k] = models[k].weights[i].value.data[j] - mn;
            std::sort(diffs.begin(), diffs.end());
            double s = 0.0;
            for (double d : diffs) s += d;
            dst[j] = s == 0.0 ? mn : mn + s * inv_n;
        }
    }
    return out;
}

ModelState clone(const ModelState& m) { return m; }

FlatWeights flatten(const ModelState& m, Part part) {
    FlatWeights flat;
    flat.layout.arch_id = m.arch_id;
    flat.layout.head_width = m.head_width;
    flat.layout.part = part;
    for (const auto& w : m.weights) {
        if (part == Part::phi && !w.is_phi) continue;
        if (part == Part::theta && w.is_phi) continue;
        flat.layout.entries.push_back({w.name, w.value.shape, flat.layout.total});
        flat.layout.total += w.value.numel();
        flat.values.insert(flat.values.end(), w.value.data.begin(), w.value.data.end());
    }
    return flat;
}

ModelState unflatten(const FlatWeights& flat) {
    if (flat.layout.part != Part::all)
        throw LayoutMismatch("only a full layout can rebuild a model");
    if (static_cast<int64_t>(flat.values.size()) != flat.layout.total)
        throw LayoutMismatch("flat vector length does not match layout");
    ModelState m = make_model(flat.layout.arch_id, flat.layout.head_width, 0);
    if (flat.layout.entries.size() != m.weights.size())
        throw LayoutMismatch("layout entry count does not match arch");
    for (size_t i = 0; i < m.weights.size(); ++i) {
        const auto& e = flat.layout.entries[i];
        if (e.name != m.weights[i].name || e.shape != m.weights[i].value.shape)
            throw LayoutMismatch("layout entry " + e.name + " does not match arch");
        std::copy(flat.values.begin() + e.offset,
                  flat.values.begin() + e.offset + m.weights[i].value.numel(),
                  m.weights[i].value.data.begin());
    }
    return m;
}

void apply_flat(ModelState& m, const FlatWeights& flat) {
    if (static_cast<int64_t>(flat.values.size()) != flat.layout.total)
        throw LayoutMismatch("flat vector length does not match layout");
    for (const auto& e : flat.layout.entries) {
        Tensor& t = m.array(e.name);
        if (t.shape != e.shape) throw LayoutMismatch("shape mismatch on " + e.name);
        std::copy(flat.values.begin() + e.offset, flat.values.begin() + e.offset + t.numel(),
                  t.data.begin());
    }
}

Archive model_to_archive(const ModelState& m) {
    Archive a;
    a.strings["arch_id"] = m.arch_id;
    a.ints["head_width"] = m.head_width;
    for (const auto& w : m.weights) a.arrays["w:" + w.name] = w.value;
    return a;
}

ModelState model_from_archive(const Archive& a) {
    ModelState m = make_model(a.str("arch_id"), static_cast<int>(a.integer("head_width")), 0);
    for (auto& w : m.weights) {
        const Tensor& t = a.array("w:" + w.name);
        if (t.shape != w.value.shape)
            throw LayoutMismatch("checkpoint shape mismatch on " + w.name);
        w.value = t;
    }
    return m;
}

} // namespace tkil
