// SPDX-License-Identifier: Apache-2.0
//
#include "eva/net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "eva/errors.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace {

double gelu_phi(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double apply_act(double x, Activation a) {
  switch (a) {
    case Activation::none: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::gelu: return x * gelu_phi(x);
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

double act_grad(double x, Activation a) {
  switch (a) {
    case Activation::none: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return gelu_phi(x) + x * pdf;
    }
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

bool is_all_zero(const Matrix& m) {
  for (double v : m.data())
    if (v != 0.0) return false;
  return true;
}

const AdapterView* find_adapter(const AdapterViews* adapters, const std::string& name) {
  if (!adapters) return nullptr;
  auto it = adapters->find(name);
  return it == adapters->end() ? nullptr : &it->second;
}

struct LinCache {
  Matrix input;  // X seen by the layer
  Matrix ax;     // X * A^T when an adapter is attached
  const AdapterView* adapter = nullptr;
};

struct DenseCache {
  LinCache lin;
  Matrix pre;  // pre-activation
};

struct AttnCache {
  LinCache q, k, v, o;
  Matrix qm, km, vm;  // projected batches
  Matrix scores;      // row-softmaxed attention weights (b x b)
  double inv_sqrt_d = 1.0;
};

using BlockCache = std::variant<DenseCache, AttnCache>;

Matrix linear_forward(const LinearLayer& layer, const AdapterView* adapter, const Matrix& x, LinCache* cache) {
  if (x.cols() != layer.w.cols())
    throw std::invalid_argument("forward: dimension mismatch at layer '" + layer.name + "'");
  Matrix y = matmul_nt(x, layer.w);
  if (layer.bias) {
    if (layer.bias->size() != layer.w.rows())
      throw std::invalid_argument("forward: bias length mismatch at layer '" + layer.name + "'");
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += (*layer.bias)[j];
  }
  Matrix ax;
  if (adapter) {
    ax = matmul_nt(x, *adapter->a);  // b x r
    // an exactly-zero B contributes nothing; skipping the add keeps the
    // freshly initialized network bit-identical to the base network
    if (!is_all_zero(*adapter->b)) {
      const Matrix delta = matmul_nt(ax, *adapter->b);  // b x k
      Matrix scaled = delta;
      scale_in_place(scaled, adapter->scaling);
      add_scaled_in_place(y, scaled, 1.0);
    }
  }
  if (cache) {
    cache->input = x;
    cache->ax = std::move(ax);
    cache->adapter = adapter;
  }
  return y;
}

Matrix softmax_rows(const Matrix& p) {
  Matrix s(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double mx = p.at(i, 0);
    for (std::size_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double e = std::exp(p.at(i, j) - mx);
      s.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < p.cols(); ++j) s.at(i, j) /= sum;
  }
  return s;
}

Matrix attention_forward(const AttentionBlock& ab, const AdapterViews* adapters, const Matrix& x, AttnCache* cache) {
  AttnCache local;
  AttnCache* c = cache ? cache : &local;
  c->qm = linear_forward(ab.wq, find_adapter(adapters, ab.wq.name), x, &c->q);
  c->km = linear_forward(ab.wk, find_adapter(adapters, ab.wk.name), x, &c->k);
  c->vm = linear_forward(ab.wv, find_adapter(adapters, ab.wv.name), x, &c->v);
  c->inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(ab.wq.w.rows()));
  Matrix p = matmul_nt(c->qm, c->km);
  scale_in_place(p, c->inv_sqrt_d);
  c->scores = softmax_rows(p);
  const Matrix ctx = matmul(c->scores, c->vm);
  return linear_forward(ab.wo, find_adapter(adapters, ab.wo.name), ctx, &c->o);
}

Matrix run_forward(const ToyNetwork& net, const Matrix& x, const AdapterViews* adapters,
                   std::vector<BlockCache>* caches) {
  Matrix cur = x;
  for (const Block& block : net.blocks) {
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      DenseCache dc;
      Matrix pre = linear_forward(dense->layer, find_adapter(adapters, dense->layer.name), cur, caches ? &dc.lin : nullptr);
      if (dense->act == Activation::none) {
        cur = pre;
        if (caches) dc.pre = cur;
      } else {
        Matrix post(pre.rows(), pre.cols());
        for (std::size_t i = 0; i < pre.data().size(); ++i) post.data()[i] = apply_act(pre.data()[i], dense->act);
        if (caches) dc.pre = std::move(pre);
        cur = std::move(post);
      }
      if (caches) caches->push_back(std::move(dc));
    } else {
      const auto& attn = std::get<AttentionBlock>(block);
      AttnCache ac;
      cur = attention_forward(attn, adapters, cur, caches ? &ac : nullptr);
      if (caches) caches->push_back(std::move(ac));
    }
  }
  return cur;
}

Matrix colsum_row(const Matrix& g) {
  Matrix s(1, g.cols());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) s.at(0, j) += g.at(i, j);
  return s;
}

Matrix linear_backward(const LinearLayer& layer, const LinCache& cache, const Matrix& g, bool want_base,
                       std::map<std::string, Matrix>& grads) {
  Matrix dx = matmul(g, layer.w);
  if (cache.adapter) {
    const AdapterView& av = *cache.adapter;
    const Matrix gb = matmul(g, *av.b);  // b x r
    add_scaled_in_place(dx, matmul(gb, *av.a), av.scaling);
    Matrix da = matmul_tn(gb, cache.input);
    scale_in_place(da, av.scaling);
    Matrix db = matmul_tn(g, cache.ax);
    scale_in_place(db, av.scaling);
    grads[layer.name + "#A"] = std::move(da);
    grads[layer.name + "#B"] = std::move(db);
  }
  if (want_base && !layer.frozen) {
    grads[layer.name] = matmul_tn(g, cache.input);
    if (layer.bias) grads[layer.name + "#bias"] = colsum_row(g);
  }
  return dx;
}

Matrix softmax_backward(const Matrix& s, const Matrix& ds) {
  Matrix dp(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) inner += ds.at(i, j) * s.at(i, j);
    for (std::size_t j = 0; j < s.cols(); ++j) dp.at(i, j) = s.at(i, j) * (ds.at(i, j) - inner);
  }
  return dp;
}

Matrix attention_backward(const AttentionBlock& ab, const AttnCache& c, const Matrix& g, bool want_base,
                          std::map<std::string, Matrix>& grads) {
  const Matrix dctx = linear_backward(ab.wo, c.o, g, want_base, grads);
  const Matrix ds = matmul_nt(dctx, c.vm);
  const Matrix dv = matmul_tn(c.scores, dctx);
  const Matrix dp = softmax_backward(c.scores, ds);
  Matrix dq = matmul(dp, c.km);
  scale_in_place(dq, c.inv_sqrt_d);
  Matrix dk = matmul_tn(dp, c.qm);
  scale_in_place(dk, c.inv_sqrt_d);
  Matrix dx = linear_backward(ab.wq, c.q, dq, want_base, grads);
  add_scaled_in_place(dx, linear_backward(ab.wk, c.k, dk, want_base, grads), 1.0);
  add_scaled_in_place(dx, linear_backward(ab.wv, c.v, dv, want_base, grads), 1.0);
  return dx;
}

bool row_active(const Batch& batch, std::size_t i) {
  return !batch.mask || (*batch.mask)[i] != 0;
}

std::size_t active_rows(const Batch& batch) {
  if (!batch.mask) return batch.inputs.rows();
  std::size_t n = 0;
  for (auto m : *batch.mask) n += m != 0 ? 1 : 0;
  return n;
}

void check_one_hot(const Matrix& targets, std::size_t row) {
  double sum = 0.0;
  for (std::size_t j = 0; j < targets.cols(); ++j) {
    const double t = targets.at(row, j);
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("cross_entropy: targets must be one-hot rows");
    sum += t;
  }
  if (sum != 1.0) throw std::invalid_argument("cross_entropy: targets must be one-hot rows");
}

// loss and dL/dY; masked rows contribute neither
std::pair<double, Matrix> loss_and_grad(const Matrix& y, const Batch& batch, LossKind kind) {
  if (!y.same_shape(batch.targets)) throw std::invalid_argument("loss: output/target shape mismatch");
  const std::size_t act = active_rows(batch);
  if (act == 0) throw std::invalid_argument("loss: every row is masked out");
  Matrix dy(y.rows(), y.cols());
  double loss = 0.0;
  if (kind == LossKind::mse) {
    const double n_el = static_cast<double>(act * y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      if (!row_active(batch, i)) continue;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        const double d = y.at(i, j) - batch.targets.at(i, j);
        loss += d * d / n_el;
        dy.at(i, j) = 2.0 * d / n_el;
      }
    }
  } else {
    const double n = static_cast<double>(act);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      if (!row_active(batch, i)) continue;
      check_one_hot(batch.targets, i);
      double mx = y.at(i, 0);
      for (std::size_t j = 1; j < y.cols(); ++j) mx = std::max(mx, y.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) sum += std::exp(y.at(i, j) - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        const double p = std::exp(y.at(i, j) - mx) / sum;
        dy.at(i, j) = (p - batch.targets.at(i, j)) / n;
        loss += batch.targets.at(i, j) * (lse - y.at(i, j)) / n;
      }
    }
  }
  if (!std::isfinite(loss)) throw NumericError("loss is not finite");
  return {loss, std::move(dy)};
}

BackwardResult backward_core(const ToyNetwork& net, const Batch& batch, LossKind loss, const AdapterViews* adapters,
                             bool want_base) {
  net.validate();
  batch.validate();
  std::vector<BlockCache> caches;
  const Matrix y = run_forward(net, batch.inputs, adapters, &caches);
  auto [loss_value, dy] = loss_and_grad(y, batch, loss);

  BackwardResult out;
  out.loss = loss_value;
  Matrix g = std::move(dy);
  for (std::size_t bi = net.blocks.size(); bi-- > 0;) {
    const Block& block = net.blocks[bi];
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      auto& dc = std::get<DenseCache>(caches[bi]);
      if (dense->act != Activation::none) {
        for (std::size_t i = 0; i < g.data().size(); ++i) g.data()[i] *= act_grad(dc.pre.data()[i], dense->act);
      }
      g = linear_backward(dense->layer, dc.lin, g, want_base, out.grads);
    } else {
      const auto& attn = std::get<AttentionBlock>(block);
      g = attention_backward(attn, std::get<AttnCache>(caches[bi]), g, want_base, out.grads);
    }
  }
  return out;
}

LinearLayer make_layer(std::string name, std::size_t out_dim, std::size_t in_dim, Rng& rng, double scale) {
  LinearLayer layer;
  layer.name = std::move(name);
  layer.w = Matrix(out_dim, in_dim);
  const double s = scale / std::sqrt(static_cast<double>(in_dim));
  for (double& v : layer.w.data()) v = s * rng.gaussian();
  return layer;
}

}  // namespace

void ToyNetwork::validate() const {
  if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("network: zero input/output dim");
  std::size_t cur = input_dim;
  std::size_t linear_count = 0;
  std::set<std::string> seen;
  for (const Block& block : blocks) {
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      if (dense->layer.w.cols() != cur)
        throw std::invalid_argument("network: dimension break at layer '" + dense->layer.name + "'");
      cur = dense->layer.w.rows();
      if (!seen.insert(dense->layer.name).second)
        throw std::invalid_argument("network: duplicate layer name '" + dense->layer.name + "'");
      ++linear_count;
    } else {
      const auto& attn = std::get<AttentionBlock>(block);
      for (const LinearLayer* l : {&attn.wq, &attn.wk, &attn.wv, &attn.wo}) {
        if (l->w.rows() != cur || l->w.cols() != cur)
          throw std::invalid_argument("network: attention projections must be square at the current width");
        if (!seen.insert(l->name).second)
          throw std::invalid_argument("network: duplicate layer name '" + l->name + "'");
        ++linear_count;
      }
    }
  }
  if (cur != output_dim) throw std::invalid_argument("network: output dimension mismatch");
  if (linear_count == 0) throw std::invalid_argument("network: needs at least one linear layer");
}

std::vector<std::string> ToyNetwork::layer_names() const {
  std::vector<std::string> names;
  for (const Block& block : blocks) {
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      names.push_back(dense->layer.name);
    } else {
      const auto& attn = std::get<AttentionBlock>(block);
      for (const LinearLayer* l : {&attn.wq, &attn.wk, &attn.wv, &attn.wo}) names.push_back(l->name);
    }
  }
  return names;
}

std::vector<std::string> ToyNetwork::adaptable_layer_names() const {
  std::vector<std::string> names;
  for (const std::string& n : layer_names())
    if (!find_layer(n)->frozen) names.push_back(n);
  return names;
}

const LinearLayer* ToyNetwork::find_layer(const std::string& name) const {
  for (const Block& block : blocks) {
    if (const auto* dense = std::get_if<DenseBlock>(&block)) {
      if (dense->layer.name == name) return &dense->layer;
    } else {
      const auto& attn = std::get<AttentionBlock>(block);
      for (const LinearLayer* l : {&attn.wq, &attn.wk, &attn.wv, &attn.wo})
        if (l->name == name) return l;
    }
  }
  return nullptr;
}

LinearLayer* ToyNetwork::find_layer(const std::string& name) {
  return const_cast<LinearLayer*>(static_cast<const ToyNetwork*>(this)->find_layer(name));
}

std::size_t ToyNetwork::layer_index(const std::string& name) const {
  const auto names = layer_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::invalid_argument("layer_index: unknown layer '" + name + "'");
}

void Batch::validate() const {
  if (inputs.rows() != targets.rows()) throw std::invalid_argument("batch: input/target row counts differ");
  if (mask && mask->size() != inputs.rows()) throw std::invalid_argument("batch: mask length != batch size");
  inputs.require_finite("batch inputs");
  targets.require_finite("batch targets");
}

Matrix forward(const ToyNetwork& net, const Matrix& x, const AdapterViews* adapters) {
  net.validate();
  return run_forward(net, x, adapters, nullptr);
}

TapResult forward_with_taps(const ToyNetwork& net, const Batch& batch, const std::set<std::string>& tap_layers) {
  net.validate();
  batch.validate();
  const auto names = net.layer_names();
  for (const std::string& t : tap_layers)
    if (std::find(names.begin(), names.end(), t) == names.end())
      throw std::invalid_argument("forward_with_taps: unknown tap layer '" + t + "'");

  std::vector<BlockCache> caches;
  TapResult result;
  result.output = run_forward(net, batch.inputs, nullptr, &caches);

  const std::size_t b = batch.inputs.rows();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < b; ++i)
    if (row_active(batch, i)) keep.push_back(i);
  if (keep.empty()) {
    result.all_rows_masked = true;
    return result;
  }

  auto collect = [&](const std::string& name, const Matrix& input) {
    if (!tap_layers.contains(name)) return;
    if (keep.size() == input.rows()) {
      result.taps.emplace(name, input);
      return;
    }
    Matrix filtered(keep.size(), input.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
      for (std::size_t j = 0; j < input.cols(); ++j) filtered.at(i, j) = input.at(keep[i], j);
    result.taps.emplace(name, std::move(filtered));
  };

  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    if (const auto* dense = std::get_if<DenseBlock>(&net.blocks[bi])) {
      collect(dense->layer.name, std::get<DenseCache>(caches[bi]).lin.input);
    } else {
      const auto& attn = std::get<AttentionBlock>(net.blocks[bi]);
      const auto& ac = std::get<AttnCache>(caches[bi]);
      collect(attn.wq.name, ac.q.input);
      collect(attn.wk.name, ac.k.input);
      collect(attn.wv.name, ac.v.input);
      collect(attn.wo.name, ac.o.input);
    }
  }
  return result;
}

BackwardResult backward(const ToyNetwork& net, const Batch& batch, LossKind loss) {
  return backward_core(net, batch, loss, nullptr, true);
}

BackwardResult backward(const ToyNetwork& net, const Batch& batch, LossKind loss, const AdapterViews& adapters) {
  return backward_core(net, batch, loss, &adapters, false);
}

double loss_value(const ToyNetwork& net, const Batch& batch, LossKind loss, const AdapterViews* adapters) {
  batch.validate();
  const Matrix y = run_forward(net, batch.inputs, adapters, nullptr);
  return loss_and_grad(y, batch, loss).first;
}

void TeacherStudentConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("teacher-student: depth must be >= 1");
  if (attention && depth < 2) throw std::invalid_argument("teacher-student: attention needs depth >= 2");
  if (width < 1 || input_dim < 1 || output_dim < 1) throw std::invalid_argument("teacher-student: zero dimension");
  if (z_dim < 1 || z_dim >= input_dim) throw std::invalid_argument("teacher-student: need 1 <= z_dim < input_dim");
  if (input_noise < 0 || label_noise < 0 || perturb_scale < 0)
    throw std::invalid_argument("teacher-student: negative noise scale");
  if (batch_size < 1) throw std::invalid_argument("teacher-student: batch_size must be >= 1");
  if (mask_fraction < 0.0 || mask_fraction >= 1.0)
    throw std::invalid_argument("teacher-student: mask_fraction must be in [0, 1)");
}

DataStream::DataStream(const TeacherStudentConfig& cfg, const ToyNetwork& teacher, const Matrix& g, std::uint64_t seed)
    : cfg_(cfg), teacher_(teacher), g_(g), state_seed_(seed) {}

Batch DataStream::next() {
  counter_ += 1;
  Rng rng(mix_seed(state_seed_, counter_));
  const std::size_t b = cfg_.batch_size;
  Matrix z(b, cfg_.z_dim);
  for (double& v : z.data()) v = rng.gaussian();
  Matrix x = matmul_nt(z, g_);  // rows are G * z
  if (cfg_.input_noise > 0)
    for (double& v : x.data()) v += cfg_.input_noise * rng.gaussian();
  Matrix targets = run_forward(teacher_, x, nullptr, nullptr);
  if (cfg_.label_noise > 0)
    for (double& v : targets.data()) v += cfg_.label_noise * rng.gaussian();
  Batch batch{std::move(x), std::move(targets), std::nullopt};
  if (cfg_.mask_fraction > 0.0) {
    std::vector<std::uint8_t> mask(b);
    for (std::size_t i = 0; i < b; ++i) mask[i] = rng.uniform() < cfg_.mask_fraction ? 0 : 1;
    batch.mask = std::move(mask);
  }
  return batch;
}

DataStream DataSource::stream(std::uint64_t tag) const {
  return DataStream(cfg, teacher, g, mix_seed(seed, mix_seed(0xDA7A, tag)));
}

TeacherStudent make_teacher_student(const TeacherStudentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TeacherStudent ts;
  ToyNetwork& teacher = ts.teacher;
  teacher.input_dim = cfg.input_dim;
  teacher.output_dim = cfg.output_dim;

  Rng wrng(mix_seed(seed, 0x57E1));
  std::size_t cur = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const bool last = i + 1 == cfg.depth;
    const std::size_t out = last ? cfg.output_dim : cfg.width;
    DenseBlock block;
    block.layer = make_layer("fc" + std::to_string(i), out, cur, wrng, 1.0);
    block.act = last ? Activation::none : cfg.act;
    teacher.blocks.emplace_back(std::move(block));
    cur = out;
    if (i == 0 && cfg.attention) {
      AttentionBlock attn;
      attn.wq = make_layer("attn.q", cur, cur, wrng, 1.0);
      attn.wk = make_layer("attn.k", cur, cur, wrng, 1.0);
      attn.wv = make_layer("attn.v", cur, cur, wrng, 1.0);
      attn.wo = make_layer("attn.o", cur, cur, wrng, 1.0);
      teacher.blocks.emplace_back(std::move(attn));
    }
  }
  teacher.validate();

  ts.student = teacher;
  if (cfg.perturb_scale > 0) {
    Rng prng(mix_seed(seed, 0x570D));
    for (const std::string& name : ts.student.layer_names()) {
      LinearLayer* layer = ts.student.find_layer(name);
      const double s = cfg.perturb_scale / std::sqrt(static_cast<double>(layer->w.cols()));
      for (double& v : layer->w.data()) v += s * prng.gaussian();
    }
  }

  Rng grng(mix_seed(seed, 0x6E0));
  ts.data.g = Matrix(cfg.input_dim, cfg.z_dim);
  for (double& v : ts.data.g.data()) v = grng.gaussian();
  ts.data.cfg = cfg;
  ts.data.teacher = teacher;
  ts.data.seed = seed;
  return ts;
}

}  // namespace eva
