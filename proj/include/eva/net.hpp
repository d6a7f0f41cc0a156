// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "eva/matrix.hpp"

namespace eva {

enum class Activation { none, relu, gelu, tanh };

enum class LossKind { mse, cross_entropy };

struct LinearLayer {
  std::string name;
  Matrix w;                                 // k x d, applied as y = x * W^T
  std::optional<std::vector<double>> bias;  // k
  bool frozen = false;
};

struct DenseBlock {
  LinearLayer layer;
  Activation act = Activation::none;
};

// Single-head self-attention over the rows of the batch (rows play the role
// of tokens). All four projections are d x d.
struct AttentionBlock {
  LinearLayer wq, wk, wv, wo;
};

using Block = std::variant<DenseBlock, AttentionBlock>;

struct ToyNetwork {
  std::vector<Block> blocks;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  void validate() const;  // dimension chain, >= 1 linear layer, unique names

  std::vector<std::string> layer_names() const;            // all linear layers, network order
  std::vector<std::string> adaptable_layer_names() const;  // excludes frozen ones
  const LinearLayer* find_layer(const std::string& name) const;
  LinearLayer* find_layer(const std::string& name);
  std::size_t layer_index(const std::string& name) const;  // position in layer_names()
};

struct Batch {
  Matrix inputs;   // b x d_in
  Matrix targets;  // b x d_out
  std::optional<std::vector<std::uint8_t>> mask;  // length b; nonzero = row participates

  void validate() const;
};

// Minimal view of a LoRA adapter so the forward/backward core can apply
// h = Wx + scaling * B(Ax) without depending on the adapter module.
struct AdapterView {
  const Matrix* a = nullptr;  // r x d
  const Matrix* b = nullptr;  // k x r
  double scaling = 1.0;
};
using AdapterViews = std::map<std::string, AdapterView>;

Matrix forward(const ToyNetwork& net, const Matrix& x, const AdapterViews* adapters = nullptr);

struct TapResult {
  Matrix output;                      // full-batch forward output
  std::map<std::string, Matrix> taps;  // tapped layer inputs, mask rows dropped
  bool all_rows_masked = false;        // set when the mask removed every row
};

TapResult forward_with_taps(const ToyNetwork& net, const Batch& batch, const std::set<std::string>& tap_layers);

struct BackwardResult {
  double loss = 0.0;
  // parameter gradients keyed by "<layer>" for W, "<layer>#bias",
  // "<layer>#A" and "<layer>#B" for adapter factors
  std::map<std::string, Matrix> grads;
};

// Gradients of the mean loss w.r.t. every non-frozen base parameter.
BackwardResult backward(const ToyNetwork& net, const Batch& batch, LossKind loss);

// Gradients w.r.t. adapter factors only; the base network stays frozen.
BackwardResult backward(const ToyNetwork& net, const Batch& batch, LossKind loss, const AdapterViews& adapters);

double loss_value(const ToyNetwork& net, const Batch& batch, LossKind loss, const AdapterViews* adapters = nullptr);

// --- synthetic fine-tuning task ------------------------------------------

struct TeacherStudentConfig {
  std::size_t depth = 4;    // number of dense blocks
  std::size_t width = 32;
  std::size_t input_dim = 32;
  std::size_t output_dim = 32;
  bool attention = true;    // insert one attention block after the first dense block
  Activation act = Activation::relu;
  std::size_t z_dim = 2;    // latent rank of the input distribution, < input_dim
  double input_noise = 0.01;
  double label_noise = 0.05;
  double perturb_scale = 0.1;  // student = teacher + this * gaussian
  std::size_t batch_size = 16;
  double mask_fraction = 0.0;  // > 0 emits masks dropping ~this share of rows

  void validate() const;
  // irreducible MSE when the student matches the teacher exactly
  double noise_floor() const { return label_noise * label_noise; }
};

// Stream of batches x = G z + eps with targets from the teacher network.
class DataStream {
public:
  DataStream(const TeacherStudentConfig& cfg, const ToyNetwork& teacher, const Matrix& g, std::uint64_t seed);
  Batch next();

private:
  TeacherStudentConfig cfg_;
  ToyNetwork teacher_;
  Matrix g_;
  std::uint64_t state_seed_;
  std::uint64_t counter_ = 0;
};

struct DataSource {
  TeacherStudentConfig cfg;
  ToyNetwork teacher;
  Matrix g;  // input_dim x z_dim latent mixing matrix
  std::uint64_t seed = 0;

  // independent deterministic substream; equal tags give equal streams
  DataStream stream(std::uint64_t tag) const;
};

struct TeacherStudent {
  ToyNetwork teacher;
  ToyNetwork student;
  DataSource data;
};

TeacherStudent make_teacher_student(const TeacherStudentConfig& cfg, std::uint64_t seed);

}  // namespace eva
