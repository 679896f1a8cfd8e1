#include "melemad/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "melemad/error.hpp"

namespace melemad::maml {

void validate(const MlpArchitecture& arch) {
  if (arch.input_dim < 1) throw Error(Errc::InvalidArgument, "input_dim must be positive");
  for (auto h : arch.hidden_dims) {
    if (h < 1) throw Error(Errc::InvalidArgument, "hidden layer widths must be positive");
  }
  if (!(arch.dropout_rate >= 0.0 && arch.dropout_rate < 1.0)) {
    throw Error(Errc::InvalidArgument, "dropout_rate must lie in [0, 1)");
  }
}

namespace {

std::vector<std::size_t> layer_dims(const MlpArchitecture& arch) {
  std::vector<std::size_t> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
  dims.push_back(1);
  return dims;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Offsets of each layer's weights and biases inside the flat vector.
struct Layout {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> w_off;
  std::vector<std::size_t> b_off;
  std::size_t total = 0;

  explicit Layout(const MlpArchitecture& arch) : dims(layer_dims(arch)) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      w_off.push_back(total);
      total += dims[l] * dims[l + 1];
      b_off.push_back(total);
      total += dims[l + 1];
    }
  }
  std::size_t layers() const { return w_off.size(); }
};

/// Activations of one batch. acts[0] is the input; for hidden layer h >= 1,
/// gate[h] = relu'(z_h) * dropout scale, so acts[h] = z_h * gate[h].
struct Tape {
  std::size_t n = 0;
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> gate;
  std::vector<double> logits;
};

std::vector<double> dropout_mask(const MlpArchitecture& arch, std::size_t n, PassMode mode) {
  const std::size_t width = arch.hidden_dims.empty() ? 0 : arch.hidden_dims.front();
  std::vector<double> mask(n * width, 1.0);
  if (!mode.training || arch.dropout_rate <= 0.0 || width == 0) return mask;
  std::mt19937_64 rng(mode.dropout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - arch.dropout_rate);
  for (auto& v : mask) v = u(rng) < arch.dropout_rate ? 0.0 : keep_scale;
  return mask;
}

void check_input(const ModelParams& params, const data::LabeledDataset& X) {
  if (X.cols() != params.arch.input_dim) {
    throw Error(Errc::DimensionMismatch, "network expects " + std::to_string(params.arch.input_dim) +
                                             " inputs, batch has " + std::to_string(X.cols()));
  }
  if (params.values.size() != parameter_count(params.arch)) {
    throw Error(Errc::DimensionMismatch, "parameter vector does not match architecture");
  }
}

Tape run_forward(const ModelParams& params, const Layout& lay, const data::LabeledDataset& X, PassMode mode) {
  check_input(params, X);
  const auto& w = params.values;
  Tape tape;
  tape.n = X.rows();
  const std::size_t L = lay.layers();
  tape.acts.resize(L);
  tape.gate.resize(L);
  tape.acts[0].assign(X.features().begin(), X.features().end());
  const auto mask = dropout_mask(params.arch, tape.n, mode);

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = lay.dims[l], out = lay.dims[l + 1];
    const double* W = w.data() + lay.w_off[l];
    const double* b = w.data() + lay.b_off[l];
    const auto& a = tape.acts[l];
    std::vector<double> z(tape.n * out);
    for (std::size_t i = 0; i < tape.n; ++i) {
      const double* ai = a.data() + i * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = W + o * in;
        double s = b[o];
        for (std::size_t k = 0; k < in; ++k) s += wo[k] * ai[k];
        z[i * out + o] = s;
      }
    }
    if (l + 1 == L) {
      tape.logits = std::move(z);
      break;
    }
    auto& g = tape.gate[l + 1];
    g.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double scale = l == 0 ? mask[k] : 1.0;
      g[k] = z[k] > 0.0 ? scale : 0.0;
      z[k] *= g[k];
    }
    tape.acts[l + 1] = std::move(z);
  }
  return tape;
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

std::size_t parameter_count(const MlpArchitecture& arch) { return Layout(arch).total; }

ModelParams init_params(const MlpArchitecture& arch, std::uint64_t seed) {
  validate(arch);
  const Layout lay(arch);
  ModelParams p{arch, std::vector<double>(lay.total, 0.0)};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < lay.layers(); ++l) {
    const double fan_in = static_cast<double>(lay.dims[l]);
    const double fan_out = static_cast<double>(lay.dims[l + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = lay.w_off[l]; k < lay.b_off[l]; ++k) p.values[k] = u(rng);
  }
  return p;
}

std::vector<double> forward(const ModelParams& params, const data::LabeledDataset& X, PassMode mode) {
  const Layout lay(params.arch);
  const auto tape = run_forward(params, lay, X, mode);
  std::vector<double> probs(tape.n);
  for (std::size_t i = 0; i < tape.n; ++i) probs[i] = clamp_prob(sigmoid(tape.logits[i]));
  return probs;
}

double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(probs.size()) + " probabilities vs " +
                                          std::to_string(labels.size()) + " labels");
  }
  if (probs.empty()) throw Error(Errc::LengthMismatch, "empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    s += labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -s / static_cast<double>(probs.size());
}

double loss(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode) {
  return bce_loss(forward(params, batch, mode), batch.labels());
}

LossGrad loss_and_gradient(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode) {
  const Layout lay(params.arch);
  const auto tape = run_forward(params, lay, batch, mode);
  const std::size_t n = tape.n;
  const std::size_t L = lay.layers();
  const auto& w = params.values;

  LossGrad out;
  out.probs.resize(n);
  out.grad.assign(lay.total, 0.0);
  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(tape.logits[i]);
    out.probs[i] = clamp_prob(p);
    delta[i] = (p - static_cast<double>(batch.label(i))) / static_cast<double>(n);
  }
  out.loss = bce_loss(out.probs, batch.labels());

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = lay.dims[l], outw = lay.dims[l + 1];
    const auto& a = tape.acts[l];
    double* gW = out.grad.data() + lay.w_off[l];
    double* gb = out.grad.data() + lay.b_off[l];
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a.data() + i * in;
      for (std::size_t o = 0; o < outw; ++o) {
        const double d = delta[i * outw + o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* go = gW + o * in;
        for (std::size_t k = 0; k < in; ++k) go[k] += d * ai[k];
      }
    }
    if (l == 0) break;
    const double* W = w.data() + lay.w_off[l];
    const auto& g = tape.gate[l];
    std::vector<double> prev(n * in, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < outw; ++o) {
        const double d = delta[i * outw + o];
        if (d == 0.0) continue;
        const double* wo = W + o * in;
        double* pi = prev.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) pi[k] += d * wo[k];
      }
    }
    for (std::size_t k = 0; k < prev.size(); ++k) prev[k] *= g[k];
    delta = std::move(prev);
  }
  return out;
}

std::vector<double> backward(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode) {
  return loss_and_gradient(params, batch, mode).grad;
}

std::vector<double> hessian_vector_product(const ModelParams& params, const data::LabeledDataset& batch,
                                           std::span<const double> v, PassMode mode) {
  const Layout lay(params.arch);
  if (v.size() != lay.total) throw Error(Errc::DimensionMismatch, "direction has wrong length");
  const auto tape = run_forward(params, lay, batch, mode);
  const std::size_t n = tape.n;
  const std::size_t L = lay.layers();
  const auto& w = params.values;

  // Forward R-pass: directional derivatives of pre-activations (rz) and
  // activations (ra) along v.
  std::vector<std::vector<double>> ra(L);
  ra[0].assign(n * lay.dims[0], 0.0);
  std::vector<double> rlogit;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = lay.dims[l], out = lay.dims[l + 1];
    const double* W = w.data() + lay.w_off[l];
    const double* V = v.data() + lay.w_off[l];
    const double* c = v.data() + lay.b_off[l];
    const auto& a = tape.acts[l];
    std::vector<double> rz(n * out);
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a.data() + i * in;
      const double* rai = ra[l].data() + i * in;
      for (std::size_t o = 0; o < out; ++o) {
        double s = c[o];
        const double* wo = W + o * in;
        const double* vo = V + o * in;
        for (std::size_t k = 0; k < in; ++k) s += vo[k] * ai[k] + wo[k] * rai[k];
        rz[i * out + o] = s;
      }
    }
    if (l + 1 == L) {
      rlogit = std::move(rz);
      break;
    }
    const auto& g = tape.gate[l + 1];
    for (std::size_t k = 0; k < rz.size(); ++k) rz[k] *= g[k];
    ra[l + 1] = std::move(rz);
  }

  std::vector<double> delta(n), rdelta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(tape.logits[i]);
    delta[i] = (p - static_cast<double>(batch.label(i))) / static_cast<double>(n);
    rdelta[i] = p * (1.0 - p) * rlogit[i] / static_cast<double>(n);
  }

  std::vector<double> hv(lay.total, 0.0);
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = lay.dims[l], outw = lay.dims[l + 1];
    const auto& a = tape.acts[l];
    const auto& rai = ra[l];
    double* hW = hv.data() + lay.w_off[l];
    double* hb = hv.data() + lay.b_off[l];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < outw; ++o) {
        const double d = delta[i * outw + o];
        const double rd = rdelta[i * outw + o];
        hb[o] += rd;
        double* ho = hW + o * in;
        for (std::size_t k = 0; k < in; ++k) ho[k] += rd * a[i * in + k] + d * rai[i * in + k];
      }
    }
    if (l == 0) break;
    const double* W = w.data() + lay.w_off[l];
    const double* V = v.data() + lay.w_off[l];
    const auto& g = tape.gate[l];
    std::vector<double> prev(n * in, 0.0), rprev(n * in, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < outw; ++o) {
        const double d = delta[i * outw + o];
        const double rd = rdelta[i * outw + o];
        const double* wo = W + o * in;
        const double* vo = V + o * in;
        for (std::size_t k = 0; k < in; ++k) {
          prev[i * in + k] += d * wo[k];
          rprev[i * in + k] += rd * wo[k] + d * vo[k];
        }
      }
    }
    for (std::size_t k = 0; k < prev.size(); ++k) {
      prev[k] *= g[k];
      rprev[k] *= g[k];
    }
    delta = std::move(prev);
    rdelta = std::move(rprev);
  }
  return hv;
}

}  // namespace melemad::maml
