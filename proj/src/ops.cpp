#include "cpcssl/ops.hpp"

#include <cmath>
#include <memory>

#include "cpcssl/mac_counter.hpp"

namespace cpcssl::ad {

namespace {

using Matrix = RowMatrix<double>;

Tape& tape_of(Var v) {
  if (!v.valid()) throw Error(ErrorCode::invalid_argument, "unbound Var passed to an op");
  return *v.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::shape_mismatch, std::string(op) + ": shapes " + to_string(a.shape()) +
                                               " and " + to_string(b.shape()) + " differ");
  }
}

void require_rank(const char* op, Var a, Index rank) {
  if (a.value().rank() != rank) {
    throw Error(ErrorCode::shape_mismatch, std::string(op) + ": expected rank " +
                                               std::to_string(rank) + ", got shape " +
                                               to_string(a.shape()));
  }
}

template <typename Fn, typename Deriv>
Var unary(Var a, Fn fn, Deriv deriv) {
  Tape& tape = tape_of(a);
  Tensor out(a.shape());
  out.vec() = a.value().vec().unaryExpr(fn);
  return tape.record(std::move(out), {a}, [a, deriv](Tape& t, const Tensor& g) {
    if (!t.requires_grad(a)) return;
    const Tensor& x = t.value(a.id());
    Tensor& dst = t.grad(a);
    for (Index i = 0; i < g.size(); ++i) dst[i] += g[i] * deriv(x[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.shape()[1] != b.shape()[0]) {
    throw Error(ErrorCode::shape_mismatch, "matmul: inner dimensions of " + to_string(a.shape()) +
                                               " and " + to_string(b.shape()) + " differ");
  }
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  count_macs(static_cast<std::uint64_t>(m * k * n));
  Tensor out(Shape{m, n});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).mat().noalias() += g.mat() * b.value().mat().transpose();
    if (t.requires_grad(b)) t.grad(b).mat().noalias() += a.value().mat().transpose() * g.mat();
  });
}

Var matvec(Var w, Var x) {
  require_rank("matvec", w, 2);
  require_rank("matvec", x, 1);
  if (w.shape()[1] != x.shape()[0]) {
    throw Error(ErrorCode::shape_mismatch, "matvec: matrix " + to_string(w.shape()) +
                                               " cannot multiply vector " + to_string(x.shape()));
  }
  const Index m = w.shape()[0], n = w.shape()[1];
  count_macs(static_cast<std::uint64_t>(m * n));
  Tensor out(Shape{m});
  out.vec().noalias() = w.value().mat() * x.value().vec();
  return tape_of(w).record(std::move(out), {w, x}, [w, x](Tape& t, const Tensor& g) {
    if (t.requires_grad(w)) t.grad(w).mat().noalias() += g.vec() * x.value().vec().transpose();
    if (t.requires_grad(x)) t.grad(x).vec().noalias() += w.value().mat().transpose() * g.vec();
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape(), a.value().vec() + b.value().vec());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape(), a.value().vec() - b.value().vec());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.grad(b).vec() -= g.vec();
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), a.value().vec().cwiseProduct(b.value().vec()));
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec().cwiseProduct(b.value().vec());
    if (t.requires_grad(b)) t.grad(b).vec() += g.vec().cwiseProduct(a.value().vec());
  });
}

Var scale(Var a, double s) {
  Tensor out(a.shape(), a.value().vec() * s);
  return tape_of(a).record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec() * s;
  });
}

Var add_scalar(Var a, double s) {
  Tensor out(a.shape(), a.value().vec().array() + s);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var exp(Var a) {
  Tape& tape = tape_of(a);
  Tensor out(a.shape(), a.value().vec().array().exp().matrix());
  const int out_id = static_cast<int>(tape.size());
  return tape.record(std::move(out), {a}, [a, out_id](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec().cwiseProduct(t.value(out_id).vec());
  });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(a, sig, [sig](double x) {
    const double s = sig(x);
    return s * (1.0 - s);
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double x) {
                 const double y = std::tanh(x);
                 return 1.0 - y * y;
               });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().vec().sum());
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec().array() += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var dot(Var a, Var b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::shape_mismatch,
                "dot: sizes of " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  count_macs(static_cast<std::uint64_t>(a.size()));
  Tensor out = Tensor::scalar(a.value().vec().dot(b.value().vec()));
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g[0] * b.value().vec();
    if (t.requires_grad(b)) t.grad(b).vec() += g[0] * a.value().vec();
  });
}

Var pick(Var a, Index i) {
  if (i < 0 || i >= a.size()) {
    throw Error(ErrorCode::out_of_range, "pick: index " + std::to_string(i) +
                                             " outside tensor of shape " + to_string(a.shape()));
  }
  Tensor out = Tensor::scalar(a.value()[i]);
  return tape_of(a).record(std::move(out), {a}, [a, i](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a)[i] += g[0];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.grad(a).vec() += g.vec();
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::invalid_argument, "concat of nothing");
  Index total = 0;
  for (const Var& p : parts) total += p.size();
  Tensor out(Shape{total});
  Index offset = 0;
  for (const Var& p : parts) {
    out.vec().segment(offset, p.size()) = p.value().vec();
    offset += p.size();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    Index off = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.grad(p).vec() += g.vec().segment(off, p.size());
      off += p.size();
    }
  });
}

Var row(Var m, Index i) {
  require_rank("row", m, 2);
  if (i < 0 || i >= m.shape()[0]) {
    throw Error(ErrorCode::out_of_range,
                "row " + std::to_string(i) + " outside matrix " + to_string(m.shape()));
  }
  const Index cols = m.shape()[1];
  Tensor out(Shape{cols}, m.value().mat().row(i).transpose());
  return tape_of(m).record(std::move(out), {m}, [m, i](Tape& t, const Tensor& g) {
    if (t.requires_grad(m)) t.grad(m).mat().row(i) += g.vec().transpose();
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw Error(ErrorCode::invalid_argument, "stack_rows of nothing");
  const Index cols = rows.front().size();
  Tensor out(Shape{static_cast<Index>(rows.size()), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw Error(ErrorCode::shape_mismatch, "stack_rows: row of shape " +
                                                 to_string(rows[r].shape()) + " among rows of length " +
                                                 std::to_string(cols));
    }
    out.mat().row(static_cast<Index>(r)) = rows[r].value().vec().transpose();
  }
  return tape_of(rows.front()).record(std::move(out), rows, [rows](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (t.requires_grad(rows[r])) t.grad(rows[r]).vec() += g.mat().row(static_cast<Index>(r)).transpose();
    }
  });
}

Var gather_rows(const std::vector<Var>& mats, std::span<const std::pair<int, Index>> refs) {
  if (mats.empty() || refs.empty()) throw Error(ErrorCode::invalid_argument, "gather_rows of nothing");
  const Index cols = mats.front().shape().back();
  for (const Var& m : mats) {
    require_rank("gather_rows", m, 2);
    if (m.shape()[1] != cols) {
      throw Error(ErrorCode::shape_mismatch, "gather_rows: matrices with different column counts");
    }
  }
  std::vector<std::pair<int, Index>> picks(refs.begin(), refs.end());
  Tensor out(Shape{static_cast<Index>(picks.size()), cols});
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto [mi, ri] = picks[r];
    if (mi < 0 || static_cast<std::size_t>(mi) >= mats.size() || ri < 0 ||
        ri >= mats[static_cast<std::size_t>(mi)].shape()[0]) {
      throw Error(ErrorCode::out_of_range, "gather_rows: reference outside the inputs");
    }
    out.mat().row(static_cast<Index>(r)) = mats[static_cast<std::size_t>(mi)].value().mat().row(ri);
  }
  return tape_of(mats.front()).record(std::move(out), mats, [mats, picks](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < picks.size(); ++r) {
      const Var& m = mats[static_cast<std::size_t>(picks[r].first)];
      if (t.requires_grad(m)) t.grad(m).mat().row(picks[r].second) += g.mat().row(static_cast<Index>(r));
    }
  });
}

Var mean_rows(Var m) {
  require_rank("mean_rows", m, 2);
  const Index rows = m.shape()[0];
  if (rows == 0) throw Error(ErrorCode::invalid_argument, "mean_rows of an empty matrix");
  Tensor out(Shape{m.shape()[1]}, m.value().mat().colwise().mean().transpose());
  return tape_of(m).record(std::move(out), {m}, [m, rows](Tape& t, const Tensor& g) {
    if (!t.requires_grad(m)) return;
    t.grad(m).mat().rowwise() += g.vec().transpose() / static_cast<double>(rows);
  });
}

Var log_softmax(Var logits) {
  if (logits.size() < 1) throw Error(ErrorCode::invalid_argument, "log_softmax of an empty tensor");
  const auto& v = logits.value().vec();
  const double peak = v.maxCoeff();
  const double lse = peak + std::log((v.array() - peak).exp().sum());
  Tensor out(logits.shape(), (v.array() - lse).matrix());
  Tape& tape = tape_of(logits);
  const int out_id = static_cast<int>(tape.size());
  return tape.record(std::move(out), {logits}, [logits, out_id](Tape& t, const Tensor& g) {
    if (!t.requires_grad(logits)) return;
    const auto probs = t.value(out_id).vec().array().exp();
    t.grad(logits).vec().array() += g.vec().array() - probs * g.vec().sum();
  });
}

Var softmax(Var logits) { return exp(log_softmax(logits)); }

Var conv2d(Var input, Var kernels, Var bias, Index stride) {
  require_rank("conv2d input", input, 3);
  require_rank("conv2d kernels", kernels, 4);
  if (stride < 1) throw Error(ErrorCode::invalid_argument, "conv2d: stride must be positive");
  const Index C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const Index F = kernels.shape()[0], kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (kernels.shape()[1] != C) {
    throw Error(ErrorCode::shape_mismatch, "conv2d: kernels " + to_string(kernels.shape()) +
                                               " do not match input channels of " +
                                               to_string(input.shape()));
  }
  if (kh > H || kw > W) {
    throw Error(ErrorCode::shape_mismatch, "conv2d: kernel " + std::to_string(kh) + "x" +
                                               std::to_string(kw) + " larger than input " +
                                               std::to_string(H) + "x" + std::to_string(W));
  }
  if (bias.valid() && (bias.value().rank() != 1 || bias.size() != F)) {
    throw Error(ErrorCode::shape_mismatch, "conv2d: bias " + to_string(bias.shape()) +
                                               " for " + std::to_string(F) + " filters");
  }
  const Index Ho = (H - kh) / stride + 1, Wo = (W - kw) / stride + 1;
  const Index patch = C * kh * kw, positions = Ho * Wo;

  auto cols = std::make_shared<Matrix>(patch, positions);
  const double* in = input.value().vec().data();
  for (Index c = 0; c < C; ++c) {
    for (Index di = 0; di < kh; ++di) {
      for (Index dj = 0; dj < kw; ++dj) {
        const Index r = (c * kh + di) * kw + dj;
        for (Index oi = 0; oi < Ho; ++oi) {
          const double* src = in + (c * H + oi * stride + di) * W + dj;
          for (Index oj = 0; oj < Wo; ++oj) (*cols)(r, oi * Wo + oj) = src[oj * stride];
        }
      }
    }
  }
  count_macs(static_cast<std::uint64_t>(F * patch * positions));
  Tensor out(Shape{F, Ho, Wo});
  auto out_mat = out.mat(F, positions);
  out_mat.noalias() = kernels.value().mat(F, patch) * (*cols);
  if (bias.valid()) out_mat.colwise() += bias.value().vec();

  std::vector<Var> inputs{input, kernels};
  if (bias.valid()) inputs.push_back(bias);
  return tape_of(input).record(
      std::move(out), inputs,
      [=](Tape& t, const Tensor& g) {
        const auto gm = g.mat(F, positions);
        if (t.requires_grad(kernels)) t.grad(kernels).mat(F, patch).noalias() += gm * cols->transpose();
        if (bias.valid() && t.requires_grad(bias)) t.grad(bias).vec() += gm.rowwise().sum().transpose();
        if (t.requires_grad(input)) {
          const Matrix dcols = kernels.value().mat(F, patch).transpose() * gm;
          double* din = t.grad(input).vec().data();
          for (Index c = 0; c < C; ++c) {
            for (Index di = 0; di < kh; ++di) {
              for (Index dj = 0; dj < kw; ++dj) {
                const Index r = (c * kh + di) * kw + dj;
                for (Index oi = 0; oi < Ho; ++oi) {
                  double* dst = din + (c * H + oi * stride + di) * W + dj;
                  for (Index oj = 0; oj < Wo; ++oj) dst[oj * stride] += dcols(r, oi * Wo + oj);
                }
              }
            }
          }
        }
      });
}

Var max_positions(Var a) {
  if (a.value().rank() < 2) throw Error(ErrorCode::shape_mismatch, "max_positions needs rank >= 2");
  const Index F = a.shape()[0];
  const Index P = a.size() / F;
  if (P == 0) throw Error(ErrorCode::invalid_argument, "max_positions over zero positions");
  const auto m = a.value().mat(F, P);
  std::vector<Index> arg(static_cast<std::size_t>(F));
  Tensor out(Shape{F});
  for (Index f = 0; f < F; ++f) {
    Index best = 0;
    for (Index p = 1; p < P; ++p) {
      if (m(f, p) > m(f, best)) best = p;
    }
    arg[static_cast<std::size_t>(f)] = best;
    out[f] = m(f, best);
  }
  return tape_of(a).record(std::move(out), {a}, [a, arg, F, P](Tape& t, const Tensor& g) {
    if (!t.requires_grad(a)) return;
    auto dst = t.grad(a).mat(F, P);
    for (Index f = 0; f < F; ++f) dst(f, arg[static_cast<std::size_t>(f)]) += g[f];
  });
}

Var embed(Var table, std::span<const Index> ids) {
  require_rank("embed", table, 2);
  const Index V = table.shape()[0], E = table.shape()[1];
  const Index L = static_cast<Index>(ids.size());
  std::vector<Index> idx(ids.begin(), ids.end());
  Tensor out(Shape{E, L});
  for (Index l = 0; l < L; ++l) {
    const Index id = idx[static_cast<std::size_t>(l)];
    if (id < 0 || id >= V) {
      throw Error(ErrorCode::out_of_range,
                  "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
    }
    out.mat().col(l) = table.value().mat().row(id).transpose();
  }
  return tape_of(table).record(std::move(out), {table}, [table, idx, E](Tape& t, const Tensor& g) {
    if (!t.requires_grad(table)) return;
    auto dst = t.grad(table).mat();
    const auto gm = g.mat(E, static_cast<Index>(idx.size()));
    for (std::size_t l = 0; l < idx.size(); ++l) dst.row(idx[l]) += gm.col(static_cast<Index>(l)).transpose();
  });
}

Var gru_cell(Var h_prev, Var x, const GruWeights& w) {
  require_rank("gru_cell state", h_prev, 1);
  require_rank("gru_cell input", x, 1);
  const Index D = h_prev.size(), E = x.size();
  for (Var m : {w.w_update, w.w_reset, w.w_candidate}) {
    if (m.value().rank() != 2 || m.shape()[0] != D || m.shape()[1] != E + D) {
      throw Error(ErrorCode::shape_mismatch, "gru_cell: gate weight " + to_string(m.shape()) +
                                                 " inconsistent with state " + std::to_string(D) +
                                                 " and input " + std::to_string(E));
    }
  }
  for (Var b : {w.b_update, w.b_reset, w.b_candidate}) {
    if (b.size() != D) {
      throw Error(ErrorCode::shape_mismatch, "gru_cell: gate bias " + to_string(b.shape()) +
                                                 " for state of size " + std::to_string(D));
    }
  }
  const Var xh = concat({x, h_prev});
  const Var update = sigmoid(matvec(w.w_update, xh) + w.b_update);
  const Var reset = sigmoid(matvec(w.w_reset, xh) + w.b_reset);
  const Var candidate = tanh(matvec(w.w_candidate, concat({x, mul(reset, h_prev)})) + w.b_candidate);
  return h_prev + mul(update, candidate - h_prev);
}

}  // namespace cpcssl::ad
