#include "opera/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace opera::tensor {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

constexpr double kGeluC = 0.044715;
const double kGeluScale = std::sqrt(2.0 / M_PI);

double gelu_grad_scalar(double x) {
  double u = kGeluScale * (x + kGeluC * x * x * x);
  double t = std::tanh(u);
  double du = kGeluScale * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

double gelu_scalar(double x) {
  double u = kGeluScale * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  require(shape_.size() == 2, "tensor shapes must be rank 2");
  data_.assign(shape_[0] * shape_[1], 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  require(values.size() == t.size(), "tensor data does not match shape " + t.shape_str());
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return from({1, n}, std::move(values));
}

double Tensor::item() const {
  require(size() == 1, "item() on tensor of shape " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string out = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape_[i]);
  }
  return out + "]";
}

Ref Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, const Node&)> back,
               const char* op_name) {
  if (!value.all_finite()) fail(std::string(op_name) + ": non-finite output");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Ref{nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

const Tape::Node& Tape::node(Ref r) const {
  require(r.valid() && r.id < nodes_.size(), "invalid tape ref");
  return nodes_[r.id];
}

const Tensor& Tape::value(Ref r) const { return node(r).value; }

Ref Tape::constant(Tensor t) {
  require(t.shape().size() == 2, "constant: rank-2 tensor required");
  return push(std::move(t), false, nullptr, "constant");
}

Ref Tape::leaf(Param& p) {
  Param* param = &p;
  return push(p.value, true,
              [param](Tape&, const Node& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                  param->grad.data()[i] += self.grad.data()[i];
              },
              "leaf");
}

Ref Tape::matmul(Ref a, Ref b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.cols() == nb.value.rows(),
          "matmul: " + na.value.shape_str() + " x " + nb.value.shape_str());
  const std::size_t m = na.value.rows(), k = na.value.cols(), n = nb.value.cols();
  Tensor out({m, n});
  const double* A = na.value.data().data();
  const double* B = nb.value.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = a_row[kk];
      const double* b_row = B + kk * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
    }
  }
  std::size_t ia = a.id, ib = b.id;
  bool needs = na.needs_grad || nb.needs_grad;
  return push(std::move(out), needs,
              [ia, ib, m, k, n](Tape& t, const Node& self) {
                const double* dC = self.grad.data().data();
                if (t.nodes_[ia].needs_grad) {
                  double* dA = t.grad_of(ia).data().data();
                  const double* B = t.nodes_[ib].value.data().data();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                      const double* dc_row = dC + i * n;
                      const double* b_row = B + kk * n;
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) acc += dc_row[j] * b_row[j];
                      dA[i * k + kk] += acc;
                    }
                }
                if (t.nodes_[ib].needs_grad) {
                  double* dB = t.grad_of(ib).data().data();
                  const double* A = t.nodes_[ia].value.data().data();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                      double aik = A[i * k + kk];
                      if (aik == 0.0) continue;
                      const double* dc_row = dC + i * n;
                      double* db_row = dB + kk * n;
                      for (std::size_t j = 0; j < n; ++j) db_row[j] += aik * dc_row[j];
                    }
                }
              },
              "matmul");
}

Ref Tape::transpose(Ref a) {
  const Node& na = node(a);
  const std::size_t r = na.value.rows(), c = na.value.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = na.value.at(i, j);
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, r, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j) dA.at(i, j) += self.grad.at(j, i);
              },
              "transpose");
}

Ref Tape::add(Ref a, Ref b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.same_shape(nb.value),
          "add: " + na.value.shape_str() + " vs " + nb.value.shape_str());
  Tensor out = na.value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += nb.value.data()[i];
  std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), na.needs_grad || nb.needs_grad,
              [ia, ib](Tape& t, const Node& self) {
                for (std::size_t id : {ia, ib}) {
                  if (!t.nodes_[id].needs_grad) continue;
                  Tensor& d = t.grad_of(id);
                  for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] += self.grad.data()[i];
                }
              },
              "add");
}

Ref Tape::mul(Ref a, Ref b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.same_shape(nb.value),
          "mul: " + na.value.shape_str() + " vs " + nb.value.shape_str());
  Tensor out = na.value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= nb.value.data()[i];
  std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), na.needs_grad || nb.needs_grad,
              [ia, ib](Tape& t, const Node& self) {
                if (t.nodes_[ia].needs_grad) {
                  Tensor& dA = t.grad_of(ia);
                  const Tensor& B = t.nodes_[ib].value;
                  for (std::size_t i = 0; i < dA.size(); ++i)
                    dA.data()[i] += self.grad.data()[i] * B.data()[i];
                }
                if (t.nodes_[ib].needs_grad) {
                  Tensor& dB = t.grad_of(ib);
                  const Tensor& A = t.nodes_[ia].value;
                  for (std::size_t i = 0; i < dB.size(); ++i)
                    dB.data()[i] += self.grad.data()[i] * A.data()[i];
                }
              },
              "mul");
}

Ref Tape::scale(Ref a, double c) {
  const Node& na = node(a);
  Tensor out = na.value;
  for (double& v : out.data()) v *= c;
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < dA.size(); ++i)
                  dA.data()[i] += c * self.grad.data()[i];
              },
              "scale");
}

Ref Tape::concat_cols(const std::vector<Ref>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  std::size_t rows = node(parts.front()).value.rows();
  std::size_t cols = 0;
  bool needs = false;
  for (Ref p : parts) {
    const Node& np = node(p);
    require(np.value.rows() == rows, "concat_cols: row mismatch " + np.value.shape_str());
    cols += np.value.cols();
    needs = needs || np.needs_grad;
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (Ref p : parts) {
    const Tensor& v = node(p).value;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, offset + j) = v.at(i, j);
    offset += v.cols();
  }
  std::vector<std::size_t> ids;
  for (Ref p : parts) ids.push_back(p.id);
  return push(std::move(out), needs,
              [ids, rows](Tape& t, const Node& self) {
                std::size_t offset = 0;
                for (std::size_t id : ids) {
                  std::size_t c = t.nodes_[id].value.cols();
                  if (t.nodes_[id].needs_grad) {
                    Tensor& d = t.grad_of(id);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < c; ++j) d.at(i, j) += self.grad.at(i, offset + j);
                  }
                  offset += c;
                }
              },
              "concat_cols");
}

Ref Tape::slice_rows(Ref a, std::size_t begin, std::size_t end) {
  const Node& na = node(a);
  require(begin <= end && end <= na.value.rows(),
          "slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
              na.value.shape_str());
  const std::size_t c = na.value.cols();
  Tensor out({end - begin, c});
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i - begin, j) = na.value.at(i, j);
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, begin, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < self.grad.rows(); ++i)
                  for (std::size_t j = 0; j < c; ++j)
                    dA.at(begin + i, j) += self.grad.at(i, j);
              },
              "slice_rows");
}

Ref Tape::broadcast_rows(Ref a, std::size_t rows) {
  const Node& na = node(a);
  require(na.value.rows() == 1, "broadcast_rows: need {1,c}, got " + na.value.shape_str());
  const std::size_t c = na.value.cols();
  Tensor out({rows, c});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = na.value.at(0, j);
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, rows, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < rows; ++i)
                  for (std::size_t j = 0; j < c; ++j) dA.at(0, j) += self.grad.at(i, j);
              },
              "broadcast_rows");
}

Ref Tape::softmax(Ref a) {
  const Node& na = node(a);
  Tensor out = na.value;
  const std::size_t r = out.rows(), c = out.cols();
  require(c > 0, "softmax: empty rows");
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      total += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= total;
  }
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, r, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < r; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < c; ++j)
                    dot += self.grad.at(i, j) * self.value.at(i, j);
                  for (std::size_t j = 0; j < c; ++j)
                    dA.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
                }
              },
              "softmax");
}

Ref Tape::log_softmax(Ref a) {
  const Node& na = node(a);
  Tensor out = na.value;
  const std::size_t r = out.rows(), c = out.cols();
  require(c > 0, "log_softmax: empty rows");
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(out.at(i, j) - mx);
    double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) -= lse;
  }
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia, r, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                for (std::size_t i = 0; i < r; ++i) {
                  double total = 0.0;
                  for (std::size_t j = 0; j < c; ++j) total += self.grad.at(i, j);
                  for (std::size_t j = 0; j < c; ++j)
                    dA.at(i, j) += self.grad.at(i, j) - std::exp(self.value.at(i, j)) * total;
                }
              },
              "log_softmax");
}

Ref Tape::gelu(Ref a) {
  const Node& na = node(a);
  Tensor out = na.value;
  for (double& v : out.data()) v = gelu_scalar(v);
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                const Tensor& x = t.nodes_[ia].value;
                for (std::size_t i = 0; i < dA.size(); ++i)
                  dA.data()[i] += self.grad.data()[i] * gelu_grad_scalar(x.data()[i]);
              },
              "gelu");
}

Ref Tape::layer_norm(Ref x, Ref gain, Ref bias) {
  const Node& nx = node(x);
  const Node& ng = node(gain);
  const Node& nb = node(bias);
  const std::size_t r = nx.value.rows(), c = nx.value.cols();
  require(ng.value.rows() == 1 && ng.value.cols() == c && nb.value.rows() == 1 &&
              nb.value.cols() == c,
          "layer_norm: x " + nx.value.shape_str() + " gain " + ng.value.shape_str() + " bias " +
              nb.value.shape_str());
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += nx.value.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = nx.value.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) = (nx.value.at(i, j) - mean) * inv * ng.value.at(0, j) + nb.value.at(0, j);
  }
  std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  bool needs = nx.needs_grad || ng.needs_grad || nb.needs_grad;
  return push(std::move(out), needs,
              [ix, ig, ib, r, c](Tape& t, const Node& self) {
                const Tensor& xv = t.nodes_[ix].value;
                const Tensor& gv = t.nodes_[ig].value;
                for (std::size_t i = 0; i < r; ++i) {
                  double mean = 0.0;
                  for (std::size_t j = 0; j < c; ++j) mean += xv.at(i, j);
                  mean /= static_cast<double>(c);
                  double var = 0.0;
                  for (std::size_t j = 0; j < c; ++j) {
                    double d = xv.at(i, j) - mean;
                    var += d * d;
                  }
                  var /= static_cast<double>(c);
                  double inv = 1.0 / std::sqrt(var + kLayerNormEps);

                  if (t.nodes_[ig].needs_grad || t.nodes_[ib].needs_grad) {
                    for (std::size_t j = 0; j < c; ++j) {
                      double xhat = (xv.at(i, j) - mean) * inv;
                      if (t.nodes_[ig].needs_grad)
                        t.grad_of(ig).at(0, j) += self.grad.at(i, j) * xhat;
                      if (t.nodes_[ib].needs_grad) t.grad_of(ib).at(0, j) += self.grad.at(i, j);
                    }
                  }
                  if (t.nodes_[ix].needs_grad) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      double xhat = (xv.at(i, j) - mean) * inv;
                      double dxhat = self.grad.at(i, j) * gv.at(0, j);
                      mean_dxhat += dxhat;
                      mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= static_cast<double>(c);
                    mean_dxhat_xhat /= static_cast<double>(c);
                    Tensor& dX = t.grad_of(ix);
                    for (std::size_t j = 0; j < c; ++j) {
                      double xhat = (xv.at(i, j) - mean) * inv;
                      double dxhat = self.grad.at(i, j) * gv.at(0, j);
                      dX.at(i, j) += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                  }
                }
              },
              "layer_norm");
}

Ref Tape::log(Ref a) {
  const Node& na = node(a);
  Tensor out = na.value;
  for (double& v : out.data()) v = std::log(v);
  std::size_t ia = a.id;
  return push(std::move(out), na.needs_grad,
              [ia](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                const Tensor& x = t.nodes_[ia].value;
                for (std::size_t i = 0; i < dA.size(); ++i)
                  dA.data()[i] += self.grad.data()[i] / x.data()[i];
              },
              "log");
}

Ref Tape::sum(Ref a) {
  const Node& na = node(a);
  double total = std::accumulate(na.value.data().begin(), na.value.data().end(), 0.0);
  std::size_t ia = a.id;
  return push(Tensor::scalar(total), na.needs_grad,
              [ia](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                double g = self.grad.item();
                for (double& v : dA.data()) v += g;
              },
              "sum");
}

Ref Tape::mean(Ref a) {
  const Node& na = node(a);
  require(na.value.size() > 0, "mean: empty tensor");
  double total = std::accumulate(na.value.data().begin(), na.value.data().end(), 0.0);
  double denom = static_cast<double>(na.value.size());
  std::size_t ia = a.id;
  return push(Tensor::scalar(total / denom), na.needs_grad,
              [ia, denom](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                double g = self.grad.item() / denom;
                for (double& v : dA.data()) v += g;
              },
              "mean");
}

Ref Tape::gather_rows(Ref table, std::vector<std::size_t> row_ids) {
  const Node& nt = node(table);
  const std::size_t c = nt.value.cols();
  for (std::size_t id : row_ids)
    require(id < nt.value.rows(), "gather_rows: row " + std::to_string(id) + " out of " +
                                      nt.value.shape_str());
  Tensor out({row_ids.size(), c});
  for (std::size_t i = 0; i < row_ids.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = nt.value.at(row_ids[i], j);
  std::size_t it = table.id;
  return push(std::move(out), nt.needs_grad,
              [it, row_ids, c](Tape& t, const Node& self) {
                if (!t.nodes_[it].needs_grad) return;
                Tensor& dT = t.grad_of(it);
                for (std::size_t i = 0; i < row_ids.size(); ++i)
                  for (std::size_t j = 0; j < c; ++j)
                    dT.at(row_ids[i], j) += self.grad.at(i, j);
              },
              "gather_rows");
}

Ref Tape::pick(Ref a, std::size_t r, std::size_t c) {
  const Node& na = node(a);
  require(r < na.value.rows() && c < na.value.cols(),
          "pick: (" + std::to_string(r) + "," + std::to_string(c) + ") of " +
              na.value.shape_str());
  std::size_t ia = a.id;
  return push(Tensor::scalar(na.value.at(r, c)), na.needs_grad,
              [ia, r, c](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                t.grad_of(ia).at(r, c) += self.grad.item();
              },
              "pick");
}

Ref Tape::logsumexp(Ref a) {
  const Node& na = node(a);
  require(na.value.rows() == 1 && na.value.cols() > 0,
          "logsumexp: need non-empty {1,n}, got " + na.value.shape_str());
  const std::size_t c = na.value.cols();
  double mx = na.value.at(0, 0);
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, na.value.at(0, j));
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) total += std::exp(na.value.at(0, j) - mx);
  double lse = mx + std::log(total);
  std::size_t ia = a.id;
  return push(Tensor::scalar(lse), na.needs_grad,
              [ia, c, lse](Tape& t, const Node& self) {
                if (!t.nodes_[ia].needs_grad) return;
                Tensor& dA = t.grad_of(ia);
                const Tensor& z = t.nodes_[ia].value;
                double g = self.grad.item();
                for (std::size_t j = 0; j < c; ++j)
                  dA.at(0, j) += g * std::exp(z.at(0, j) - lse);
              },
              "logsumexp");
}

void Tape::backward(Ref loss) {
  const Node& ln = node(loss);
  require(!backward_done_, "backward already ran on this tape");
  require(ln.value.size() == 1, "backward: loss must be scalar, got " + ln.value.shape_str());
  require(ln.needs_grad, "backward on a tensor detached from all parameters");
  backward_done_ = true;
  grad_of(loss.id).data()[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad_ready || !n.needs_grad || !n.back) continue;
    n.back(*this, n);
  }
}

std::string GradCheckReport::csv() const {
  std::ostringstream out;
  out << "param,max_rel_err,pass\n";
  for (const GradCheckEntry& e : entries)
    out << e.param << ',' << e.max_rel_err << ',' << (e.pass ? "1" : "0") << '\n';
  return out.str();
}

GradCheckReport gradcheck(const std::function<double()>& loss_with_grad,
                          const std::vector<Param*>& params, double h, double rel_tol,
                          std::uint64_t seed, std::size_t max_coords, double abs_floor) {
  for (Param* p : params) p->zero_grad();
  double l1 = loss_with_grad();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) {
    analytic.push_back(p->grad.data());
    p->zero_grad();
  }
  double l2 = loss_with_grad();
  for (Param* p : params) p->zero_grad();
  if (l1 != l2)
    throw std::runtime_error("gradcheck: function is not deterministic (" + std::to_string(l1) +
                             " vs " + std::to_string(l2) + ")");

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        std::uniform_int_distribution<std::size_t> pickd(i, coords.size() - 1);
        std::swap(coords[i], coords[pickd(rng)]);
      }
      coords.resize(max_coords);
    }
    GradCheckEntry entry;
    entry.param = p.name;
    for (std::size_t ci : coords) {
      double saved = p.value.data()[ci];
      p.value.data()[ci] = saved + h;
      double lp = loss_with_grad();
      p.value.data()[ci] = saved - h;
      double lm = loss_with_grad();
      p.value.data()[ci] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double an = analytic[pi][ci];
      double diff = std::abs(fd - an);
      double rel = diff <= abs_floor ? 0.0 : diff / std::max(std::abs(fd), std::abs(an));
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.pass = entry.max_rel_err <= rel_tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  for (Param* p : params) p->zero_grad();
  return report;
}

}  // namespace opera::tensor
