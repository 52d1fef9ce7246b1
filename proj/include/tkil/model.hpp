#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tkil/archive.hpp"
#include "tkil/autodiff.hpp"
#include "tkil/tensor.hpp"

namespace tkil {

// One weight array of a model; phi arrays form the feature extractor, the
// rest make up the classifier head.
struct NamedArray {
    std::string name;
    Tensor value;
    bool is_phi = true;
};

// arch_id grammar:
//   mlp:<input_dim>:<h1>[,<h2>...]   tanh MLP; features = last hidden layer
//   cnn:<C>x<H>x<W>                  4-conv net with 3 maxpools; H,W >= 16
struct ModelState {
    std::string arch_id;
    int head_width = 0;
    std::vector<NamedArray> weights;

    int index_of(const std::string& name) const;
    Tensor& array(const std::string& name);
    const Tensor& array(const std::string& name) const;
};

// weight array whose gradient defines the gradient-kernel vectors
std::string feature_layer_name(const ModelState& m);

std::vector<int> model_input_shape(const ModelState& m);

ModelState make_model(const std::string& arch_id, int head_width, uint64_t seed);

struct ForwardGraph {
    std::vector<ad::NodePtr> params; // leaves, same order as ModelState::weights
    std::map<std::string, ad::NodePtr> by_name;
    ad::NodePtr features; // [B, F]
    ad::NodePtr logits;   // [B, head_width]
};

// Builds a fresh differentiable graph whose leaves carry the current weights.
ForwardGraph forward_graph(const ModelState& m, const Tensor& x);

// Evaluation-mode forward: (features, logits) values, no graph recorded.
std::pair<Tensor, Tensor> forward(const ModelState& m, const Tensor& x);

// Widens the head by new_classes rows. Row r draws its values from an rng
// seeded by (seed, r), so growing in chunks or at once yields the same rows.
ModelState grow_head(const ModelState& m, int new_classes, uint64_t seed,
                     double init_scale = 0.01);

// Elementwise mean. Computed as min + mean of offsets from the min so that
// identical inputs average to themselves bitwise and the argument order
// cannot change the rounding.
ModelState average_weights(const std::vector<ModelState>& models);

ModelState clone(const ModelState& m);

enum class Part { phi, theta, all };

struct FlatLayout {
    struct Entry {
        std::string name;
        std::vector<int> shape;
        int64_t offset = 0;
    };
    std::vector<Entry> entries;
    int64_t total = 0;
    std::string arch_id;
    int head_width = 0;
    Part part = Part::all;
};

struct FlatWeights {
    std::vector<double> values;
    FlatLayout layout;
};

FlatWeights flatten(const ModelState& m, Part part);
ModelState unflatten(const FlatWeights& flat);      // Part::all layouts only
void apply_flat(ModelState& m, const FlatWeights& flat);

Archive model_to_archive(const ModelState& m);
ModelState model_from_archive(const Archive& a);

} // namespace tkil
