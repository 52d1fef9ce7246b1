#include "tkil/losses.hpp"

#include <cmath>

#include "tkil/errors.hpp"

namespace tkil {

namespace {

constexpr double kClampEps = 1e-7;
constexpr double kNormFloor = 1e-12;

// elementwise BCE with logits against target probabilities:
// softplus(z) - z * t, stable for any z
ad::NodePtr bce_with_logits(const ad::NodePtr& logits, Tensor targets) {
    auto t = ad::constant(std::move(targets));
    return ad::mean(ad::sub(ad::softplus(logits), ad::mul(logits, t)));
}

double vec_norm(const Tensor& v) {
    double s = 0.0;
    for (double x : v.data) s += x * x;
    return std::sqrt(s);
}

} // namespace

ad::NodePtr class_loss_node(const ad::NodePtr& logits, const std::vector<int>& labels) {
    if (logits->shape().size() != 2)
        throw ShapeMismatch("class loss expects [batch, classes] logits");
    const int B = logits->shape()[0], C = logits->shape()[1];
    if (B == 0 || static_cast<int>(labels.size()) != B)
        throw EmptyBatch("class loss needs one label per sample");
    Tensor targets = Tensor::zeros({B, C});
    for (int i = 0; i < B; ++i) {
        const int l = labels[static_cast<size_t>(i)];
        if (l < 0 || l >= C)
            throw LabelOutOfRange("label " + std::to_string(l) + " outside head width " +
                                  std::to_string(C));
        targets.data[static_cast<size_t>(i) * C + l] = 1.0;
    }
    return bce_with_logits(logits, std::move(targets));
}

double class_loss(const Tensor& logits, const std::vector<int>& labels) {
    ad::NoGradGuard guard;
    return class_loss_node(ad::constant(logits), labels)->value.data[0];
}

ad::NodePtr kd_loss_node(const ad::NodePtr& student_logits, const Tensor& teacher_logits) {
    if (student_logits->shape().size() != 2 || teacher_logits.ndim() != 2)
        throw ShapeMismatch("kd loss expects [batch, classes] logits");
    const int B = student_logits->shape()[0], Cs = student_logits->shape()[1];
    const int Ct = teacher_logits.dim(1);
    if (teacher_logits.dim(0) != B || Ct > Cs)
        throw ShapeMismatch("teacher logits " + shape_str(teacher_logits.shape) +
                            " incompatible with student " + shape_str(student_logits->shape()));
    auto student = Ct == Cs ? student_logits : ad::slice_cols(student_logits, 0, Ct);
    Tensor targets = teacher_logits;
    for (auto& v : targets.data)
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return bce_with_logits(student, std::move(targets));
}

double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
    ad::NoGradGuard guard;
    return kd_loss_node(ad::constant(student_logits), teacher_logits)->value.data[0];
}

ad::NodePtr gtk_loss_node(const ad::NodePtr& g_current, const Tensor& g_previous) {
    if (g_current->numel() != g_previous.numel())
        throw ShapeMismatch("gradient vectors differ in length");
    if (vec_norm(g_current->value) < kNormFloor || vec_norm(g_previous) < kNormFloor)
        throw ZeroGradient("degenerate feature-layer gradient");
    auto prev = ad::constant(g_previous);
    auto num = ad::dot(g_current, prev);
    auto denom = ad::mul(ad::sqrt_op(ad::dot(g_current, g_current)),
                         ad::sqrt_op(ad::dot(prev, prev)));
    auto cos = ad::div(num, denom);
    auto p = ad::clamp(ad::smul(ad::sadd(cos, 1.0), 0.5), kClampEps, 1.0 - kClampEps);
    return ad::neg(ad::log_op(p));
}

double gtk_loss(const Tensor& g_current, const Tensor& g_previous) {
    ad::NoGradGuard guard;
    return gtk_loss_node(ad::constant(g_current), g_previous)->value.data[0];
}

ad::NodePtr feature_gradient_node(const ForwardGraph& fg, const std::string& feature_layer,
                                  const std::vector<int>& labels) {
    auto loss = class_loss_node(fg.logits, labels);
    auto leaf = fg.by_name.at(feature_layer);
    auto grads = ad::backward(loss, {leaf}, true);
    auto g = ad::grad_of(grads, leaf);
    return ad::reshape(g, {static_cast<int>(g->numel())});
}

GradientVector extract_feature_gradient(const ModelState& m, const Tensor& x,
                                        const std::vector<int>& labels) {
    if (x.ndim() < 1 || x.dim(0) == 0) throw EmptyBatch("cannot take gradients of an empty batch");
    auto fg = forward_graph(m, x);
    GradientVector out;
    out.values = feature_gradient_node(fg, feature_layer_name(m), labels)->value;
    return out;
}

CombinedLoss build_combined_loss(const ModelState& model, const ModelState* teacher,
                                 const Tensor& x, const std::vector<int>& labels,
                                 const LossWeights& w, bool is_current_task) {
    CombinedLoss out;
    out.graph = forward_graph(model, x);
    auto class_node = class_loss_node(out.graph.logits, labels);
    out.terms.class_value = class_node->value.data[0];

    if (is_current_task) {
        out.total = class_node;
        out.terms.total = out.terms.class_value;
        return out;
    }
    if (!teacher) throw ConfigInvalid("memory groups need a teacher model");

    out.total = ad::smul(class_node, w.alpha);
    if (w.beta != 0.0) {
        const Tensor teacher_logits = forward(*teacher, x).second;
        auto kd_node = kd_loss_node(out.graph.logits, teacher_logits);
        out.terms.kd_value = kd_node->value.data[0];
        out.total = ad::add(out.total, ad::smul(kd_node, w.beta));
    }
    if (w.gamma != 0.0) {
        auto g_t = feature_gradient_node(out.graph, feature_layer_name(model), labels);
        const Tensor g_prev = extract_feature_gradient(*teacher, x, labels).values;
        try {
            auto gtk_node = gtk_loss_node(g_t, g_prev);
            out.terms.gtk_value = gtk_node->value.data[0];
            out.total = ad::add(out.total, ad::smul(gtk_node, w.gamma));
        } catch (const ZeroGradient&) {
            out.terms.gtk_skipped = true;
        }
    }
    out.terms.total = out.total->value.data[0];
    return out;
}

} // namespace tkil
