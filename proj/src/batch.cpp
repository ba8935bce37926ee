#include "gksn/batch.hpp"

#include <cmath>

namespace gksn {

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::vector<double> flat_coords(const Frame& frame) {
  std::vector<double> flat(static_cast<std::size_t>(frame.coords.size()));
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) flat[r * frame.n() + c] = frame.coords(r, c);
  return flat;
}

Features<double> frame_scalars(const Model& model, const Frame& frame) {
  frame.validate();
  if (frame.m() != model.frame_m() || frame.n() != model.frame_n()) {
    throw DimensionError("frame shape does not match the model");
  }
  const auto flat = flat_coords(frame);
  return detail::pair_scalars<double>(model.feature_config(), model.metric(), frame.m(),
                                      frame.n(), model.perm(), std::span<const double>(flat),
                                      frame.types);
}

// [x, relu(x - t_1), ...] per column, columns laid out input-major.
RowMatrix expand(const RowMatrix& z, const std::vector<double>& knots) {
  const Eigen::Index b1 = Eigen::Index(knots.size()) + 1;
  RowMatrix h(z.rows(), z.cols() * b1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double x = z(r, j);
      h(r, j * b1) = x;
      for (Eigen::Index b = 1; b < b1; ++b) {
        const double v = x - knots[std::size_t(b - 1)];
        h(r, j * b1 + b) = v > 0.0 ? v : 0.0;
      }
    }
  }
  return h;
}

// Chain rule through expand(): d/dz from d/dh.
RowMatrix contract(const RowMatrix& dh, const RowMatrix& z, const std::vector<double>& knots) {
  const Eigen::Index b1 = Eigen::Index(knots.size()) + 1;
  RowMatrix dz(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double x = z(r, j);
      double g = dh(r, j * b1);
      for (Eigen::Index b = 1; b < b1; ++b) {
        if (x - knots[std::size_t(b - 1)] > 0.0) g += dh(r, j * b1 + b);
      }
      dz(r, j) = g;
    }
  }
  return dz;
}

struct KanCache {
  RowMatrix z, hz, s, hs, pre;
};

struct DenseCache {
  RowMatrix z, pre;
};

struct Forward {
  RowMatrix pool_in;  // input rows for pooled models
  std::vector<KanCache> kan;
  std::vector<DenseCache> dense;
  RowMatrix out;
};

Forward run_forward(const Model& model, const RowMatrix& inputs, bool keep) {
  const auto p = model.params();
  const Eigen::Index b1 = Eigen::Index(model.knots().size()) + 1;
  Forward fw;
  RowMatrix z;
  if (model.perm()) {
    const PoolBlock& pool = *model.pool();
    ConstMap bank(p.data() + pool.bank, Eigen::Index(pool.pair_width) * b1, pool.entries);
    z = inputs * bank;
    if (keep) fw.pool_in = inputs;
  } else {
    z = inputs;
  }
  if (model.kind() == ModelKind::kan) {
    for (const GksnBlock& blk : model.gksn_layers()) {
      KanCache c;
      ConstMap phi(p.data() + blk.phi, Eigen::Index(blk.in) * b1, blk.hidden);
      ConstMap psi(p.data() + blk.psi, Eigen::Index(blk.hidden) * b1, blk.out);
      ConstMap w_phi(p.data() + blk.w_phi, blk.in, blk.out);
      ConstMap w_psi(p.data() + blk.w_psi, blk.out, blk.out);
      c.hz = expand(z, model.knots());
      c.s = c.hz * phi;
      c.hs = expand(c.s, model.knots());
      c.pre = z * w_phi;
      RowMatrix next = c.hs * psi + c.pre.cwiseMax(0.0) * w_psi.transpose();
      if (keep) {
        c.z = std::move(z);
        fw.kan.push_back(std::move(c));
      }
      z = std::move(next);
    }
  } else {
    for (const DenseBlock& blk : model.dense_layers()) {
      DenseCache c;
      ConstMap w(p.data() + blk.weight, blk.in, blk.out);
      Eigen::Map<const Eigen::RowVectorXd> bias(p.data() + blk.bias, blk.out);
      c.pre = (z * w).rowwise() + bias;
      RowMatrix next = blk.activation ? RowMatrix(c.pre.cwiseMax(0.0)) : c.pre;
      if (keep) {
        c.z = std::move(z);
        fw.dense.push_back(std::move(c));
      }
      z = std::move(next);
    }
  }
  fw.out = std::move(z);
  return fw;
}

}  // namespace

RowMatrix raw_inputs(const Model& model, const std::vector<Frame>& frames) {
  std::vector<Features<double>> feats;
  feats.reserve(frames.size());
  for (const Frame& f : frames) feats.push_back(frame_scalars(model, f));
  const Eigen::Index width = model.raw_input_width();
  Eigen::Index rows = 0;
  for (const auto& f : feats) rows += Eigen::Index(f.values.size()) / width;
  RowMatrix out(rows, width);
  Eigen::Index r = 0;
  for (const auto& f : feats) {
    const Eigen::Index count = Eigen::Index(f.values.size()) / width;
    out.middleRows(r, count) = ConstMap(f.values.data(), count, width);
    r += count;
  }
  return out;
}

Standardizer fit_standardizer(const Model& model, const std::vector<Frame>& frames) {
  const RowMatrix raw = raw_inputs(model, frames);
  Standardizer s;
  const Eigen::Index width = raw.cols();
  s.mean.assign(std::size_t(width), 0.0);
  s.inv_std.assign(std::size_t(width), 1.0);
  if (raw.rows() == 0) return s;
  for (Eigen::Index c = 0; c < width; ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) sum += raw(r, c);
    const double mean = sum / double(raw.rows());
    double var = 0.0;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) var += (raw(r, c) - mean) * (raw(r, c) - mean);
    var /= double(raw.rows());
    s.mean[std::size_t(c)] = mean;
    s.inv_std[std::size_t(c)] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

RowMatrix prepare_inputs(const Model& model, const std::vector<Frame>& frames) {
  const Standardizer& norm = model.input_norm();
  if (!model.perm()) {
    RowMatrix x = raw_inputs(model, frames);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        x(r, c) = (x(r, c) - norm.mean[std::size_t(c)]) * norm.inv_std[std::size_t(c)];
    return x;
  }
  const PoolBlock& pool = *model.pool();
  const Eigen::Index b1 = Eigen::Index(model.knots().size()) + 1;
  RowMatrix out(Eigen::Index(frames.size()), Eigen::Index(pool.pair_width) * b1);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Features<double> feats = frame_scalars(model, frames[f]);
    const Eigen::Index pairs = Eigen::Index(feats.values.size()) / pool.pair_width;
    RowMatrix scaled(pairs, pool.pair_width);
    for (Eigen::Index p = 0; p < pairs; ++p)
      for (Eigen::Index w = 0; w < pool.pair_width; ++w)
        scaled(p, w) = (feats.values[std::size_t(p * pool.pair_width + w)] - norm.mean[std::size_t(w)]) *
                       norm.inv_std[std::size_t(w)];
    const RowMatrix h = expand(scaled, model.knots());
    // Sorted per-column sums keep the result independent of the row order.
    std::vector<double> column(static_cast<std::size_t>(pairs));
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      for (Eigen::Index p = 0; p < pairs; ++p) column[std::size_t(p)] = h(p, c);
      out(Eigen::Index(f), c) = detail::sorted_sum(column) / double(pairs);
    }
  }
  return out;
}

Eigen::VectorXd predict(const Model& model, const RowMatrix& inputs) {
  const Forward fw = run_forward(model, inputs, false);
  return fw.out.col(0);
}

double loss_and_gradient(const Model& model, const RowMatrix& inputs,
                         const Eigen::VectorXd& targets, std::span<const Eigen::Index> rows,
                         double delta, std::span<double> grad) {
  if (grad.size() != model.param_count()) throw DimensionError("gradient size mismatch");
  if (rows.empty()) throw DimensionError("empty batch");
  RowMatrix batch(Eigen::Index(rows.size()), inputs.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) batch.row(Eigen::Index(i)) = inputs.row(rows[i]);

  const Forward fw = run_forward(model, batch, true);
  const double inv_n = 1.0 / double(rows.size());
  RowMatrix d(batch.rows(), 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double e = fw.out(Eigen::Index(i), 0) - targets(rows[i]);
    const double a = std::abs(e);
    if (a <= delta) {
      loss += 0.5 * e * e;
      d(Eigen::Index(i), 0) = e * inv_n;
    } else {
      loss += delta * (a - 0.5 * delta);
      d(Eigen::Index(i), 0) = (e > 0 ? delta : -delta) * inv_n;
    }
  }
  loss *= inv_n;

  std::fill(grad.begin(), grad.end(), 0.0);
  const auto p = model.params();
  const Eigen::Index b1 = Eigen::Index(model.knots().size()) + 1;
  const bool need_input_grad = model.perm();

  if (model.kind() == ModelKind::kan) {
    const auto& blocks = model.gksn_layers();
    for (std::size_t li = blocks.size(); li-- > 0;) {
      const GksnBlock& blk = blocks[li];
      const KanCache& c = fw.kan[li];
      ConstMap phi(p.data() + blk.phi, Eigen::Index(blk.in) * b1, blk.hidden);
      ConstMap psi(p.data() + blk.psi, Eigen::Index(blk.hidden) * b1, blk.out);
      ConstMap w_phi(p.data() + blk.w_phi, blk.in, blk.out);
      ConstMap w_psi(p.data() + blk.w_psi, blk.out, blk.out);
      MutMap g_phi(grad.data() + blk.phi, Eigen::Index(blk.in) * b1, blk.hidden);
      MutMap g_psi(grad.data() + blk.psi, Eigen::Index(blk.hidden) * b1, blk.out);
      MutMap g_wphi(grad.data() + blk.w_phi, blk.in, blk.out);
      MutMap g_wpsi(grad.data() + blk.w_psi, blk.out, blk.out);

      g_psi.noalias() = c.hs.transpose() * d;
      const RowMatrix ds = contract(RowMatrix(d * psi.transpose()), c.s, model.knots());
      g_phi.noalias() = c.hz.transpose() * ds;

      const RowMatrix r = c.pre.cwiseMax(0.0);
      g_wpsi.noalias() = d.transpose() * r;
      RowMatrix dpre = d * w_psi;
      for (Eigen::Index i = 0; i < dpre.size(); ++i) {
        if (!(c.pre.data()[i] > 0.0)) dpre.data()[i] = 0.0;
      }
      g_wphi.noalias() = c.z.transpose() * dpre;

      if (li > 0 || need_input_grad) {
        RowMatrix dz = contract(RowMatrix(ds * phi.transpose()), c.z, model.knots());
        dz.noalias() += dpre * w_phi.transpose();
        d = std::move(dz);
      }
    }
  } else {
    const auto& blocks = model.dense_layers();
    for (std::size_t li = blocks.size(); li-- > 0;) {
      const DenseBlock& blk = blocks[li];
      const DenseCache& c = fw.dense[li];
      if (blk.activation) {
        for (Eigen::Index i = 0; i < d.size(); ++i) {
          if (!(c.pre.data()[i] > 0.0)) d.data()[i] = 0.0;
        }
      }
      ConstMap w(p.data() + blk.weight, blk.in, blk.out);
      MutMap g_w(grad.data() + blk.weight, blk.in, blk.out);
      Eigen::Map<Eigen::RowVectorXd> g_b(grad.data() + blk.bias, blk.out);
      g_w.noalias() = c.z.transpose() * d;
      g_b = d.colwise().sum();
      if (li > 0 || need_input_grad) d = d * w.transpose();
    }
  }

  if (model.perm()) {
    const PoolBlock& pool = *model.pool();
    MutMap g_bank(grad.data() + pool.bank, Eigen::Index(pool.pair_width) * b1, pool.entries);
    g_bank.noalias() = fw.pool_in.transpose() * d;
  }
  return loss;
}

}  // namespace gksn
