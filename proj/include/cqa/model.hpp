#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cqa/featurize.hpp"
#include "cqa/params.hpp"
#include "cqa/tape.hpp"

namespace cqa {

enum class GateMode { Both, EdgeOnly, NodeOnly, None };
enum class Pooling { Sum, Mean, Max };

const char* to_string(GateMode m);
const char* to_string(Pooling p);
GateMode gate_mode_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);

struct ModelConfig {
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 8;
  double ggt_dropout = 0.4;
  double readout_dropout = 0.5;
  double w_lc = 0.1;  // classification loss weight
  double w_lr = 0.9;  // regression loss weight
  GateMode gate_mode = GateMode::Both;
  Pooling pooling = Pooling::Sum;

  int head_dim() const { return hidden_dim / num_heads; }
  void validate() const;
};

struct QualityPrediction {
  float q = 0;                      // predicted quality score in [0, 1]
  std::array<float, 4> y = {0, 0, 0, 0};  // Incorrect/Acceptable/Medium/High probabilities
};

// Several graphs merged block-diagonally; node and edge rows are the
// per-graph rows concatenated, with edge endpoints offset.
struct GraphBatch {
  std::int32_t num_graphs = 0;
  std::int32_t num_nodes = 0;
  Tensor<float> node_features;           // N x 35
  Tensor<float> edge_features;           // M x 6
  std::vector<std::int32_t> edge_src;    // M
  std::vector<std::int32_t> edge_dst;    // M
  std::vector<std::int32_t> node_graph;  // N, graph ordinal per node
};

GraphBatch make_batch(const std::vector<const ProteinGraph*>& graphs);

// Registers every learnable tensor and batch-norm buffer. Name layout is
// stable; checkpoints serialize entries in registration order.
template <typename T>
void build_params(ParamStore<T>& store, const ModelConfig& cfg);

struct ForwardMode {
  bool train = false;       // batch statistics + dropout when true
  bool update_bn = true;    // ignored in eval mode
  std::uint64_t dropout_seed = 0;
  std::uint64_t dropout_step = 0;
};

template <typename T>
struct ForwardRefs {
  typename Tape<T>::Ref pooled = -1;
  typename Tape<T>::Ref class_logits = -1;  // p-hat, B x 4
  typename Tape<T>::Ref class_probs = -1;   // y, B x 4
  typename Tape<T>::Ref score = -1;         // q, B x 1
  std::vector<typename Tape<T>::Ref> layer_nodes;  // per-layer node states
  std::vector<typename Tape<T>::Ref> layer_edges;  // per-layer edge states
};

template <typename T>
ForwardRefs<T> forward(Tape<T>& tape, const ParamStore<T>& store,
                       const typename ParamStore<T>::Binding& binding, ParamStore<T>& mutable_store,
                       const GraphBatch& batch, const ModelConfig& cfg, const ForwardMode& mode);

// Embedding blocks alone (linear + batch norm + LeakyReLU), exposed for tests.
template <typename T>
std::pair<typename Tape<T>::Ref, typename Tape<T>::Ref> embed(
    Tape<T>& tape, const ParamStore<T>& store, const typename ParamStore<T>::Binding& binding,
    ParamStore<T>& mutable_store, const GraphBatch& batch, const ForwardMode& mode);

// One GGT layer on existing node/edge states.
template <typename T>
std::pair<typename Tape<T>::Ref, typename Tape<T>::Ref> ggt_layer(
    Tape<T>& tape, const ParamStore<T>& store, const typename ParamStore<T>::Binding& binding,
    ParamStore<T>& mutable_store, int layer, typename Tape<T>::Ref node_state,
    typename Tape<T>::Ref edge_state, const GraphBatch& batch, const ModelConfig& cfg,
    const ForwardMode& mode);

// Mean squared error over a batch of predicted/true scores (B x 1 each).
template <typename T>
typename Tape<T>::Ref loss_regression(Tape<T>& tape, typename Tape<T>::Ref pred,
                                      typename Tape<T>::Ref truth);

// Categorical cross-entropy from class logits (B x 4) and true class ids.
template <typename T>
typename Tape<T>::Ref loss_classification(Tape<T>& tape, typename Tape<T>::Ref logits,
                                          const std::vector<std::int32_t>& classes);

template <typename T>
typename Tape<T>::Ref loss_total(Tape<T>& tape, typename Tape<T>::Ref class_loss,
                                 typename Tape<T>::Ref regression_loss, const ModelConfig& cfg);

// Single-graph eval-mode inference.
QualityPrediction predict(ParamStore<float>& store, const ProteinGraph& graph,
                          const ModelConfig& cfg);

// Versioned checkpoint: JSON header + raw little-endian f32 blocks.
void save_checkpoint(const ParamStore<float>& store, const ModelConfig& cfg,
                     const std::string& path);
struct Checkpoint {
  ParamStore<float> store;
  ModelConfig config;
};
Checkpoint load_checkpoint(const std::string& path);

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace cqa

#include "cqa/model_impl.hpp"
