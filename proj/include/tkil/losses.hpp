#pragma once

#include <vector>

#include "tkil/autodiff.hpp"
#include "tkil/model.hpp"
#include "tkil/tensor.hpp"

namespace tkil {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.1;
};

// Mean binary cross-entropy between sigmoid(logits) and one-hot targets,
// averaged over batch x classes.
ad::NodePtr class_loss_node(const ad::NodePtr& logits, const std::vector<int>& labels);
double class_loss(const Tensor& logits, const std::vector<int>& labels);

// Mean BCE between sigmoid(student) and sigmoid(teacher) soft targets,
// computed on the first teacher-width logits; extra student logits ignored.
ad::NodePtr kd_loss_node(const ad::NodePtr& student_logits, const Tensor& teacher_logits);
double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits);

// BCE-on-cosine alignment: p = clamp((1 + cos)/2, eps, 1-eps), loss = -log p.
// Throws ZeroGradient when either vector's norm is below 1e-12.
ad::NodePtr gtk_loss_node(const ad::NodePtr& g_current, const Tensor& g_previous);
double gtk_loss(const Tensor& g_current, const Tensor& g_previous);

struct GradientVector {
    Tensor values; // flattened over the designated feature layer
    int source_stage = 0;
    int task_group = 0;
};

// Gradient of the class loss over the batch with respect to the designated
// last feature layer, flattened to one vector.
GradientVector extract_feature_gradient(const ModelState& m, const Tensor& x,
                                        const std::vector<int>& labels);

// Differentiable variant built on an existing forward graph: the returned node
// is the feature-layer gradient and stays differentiable in the graph leaves.
ad::NodePtr feature_gradient_node(const ForwardGraph& fg, const std::string& feature_layer,
                                  const std::vector<int>& labels);

struct LossTerms {
    double class_value = 0.0;
    double kd_value = 0.0;
    double gtk_value = 0.0;
    double total = 0.0;
    bool gtk_skipped = false;
};

struct CombinedLoss {
    ForwardGraph graph; // leaves to optimize
    ad::NodePtr total;  // scalar loss node
    LossTerms terms;
};

// Current-task groups get the plain class loss; memory groups get
// alpha*class + beta*kd + gamma*gtk with the teacher's logits and gradient
// held constant. Zero beta or gamma skips the term entirely, and a degenerate
// gradient norm skips the gtk term (recorded in terms.gtk_skipped).
CombinedLoss build_combined_loss(const ModelState& model, const ModelState* teacher,
                                 const Tensor& x, const std::vector<int>& labels,
                                 const LossWeights& w, bool is_current_task);

} // namespace tkil
