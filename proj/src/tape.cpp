#include "dance/tape.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dance {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2) {
        throw DimensionError(std::string(op) + ": expected 2-d tensor, got " + t.shape_str());
    }
}

} // namespace

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    out = Tensor::zeros({n, m});
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* po = out.data.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            const double* brow = pb + t * m;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void add_row_into(const Tensor& a, const Tensor& row, Tensor& out) {
    out = a;
    const std::size_t n = a.rows(), m = a.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += row.data[j];
}

void relu_into(const Tensor& a, Tensor& out) {
    out = a;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
}

void softmax_rows_into(const Tensor& a, Tensor& out) {
    out = a;
    const std::size_t n = a.rows(), m = a.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data.data() + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m; ++j) row[j] /= sum;
    }
}

Var Tape::push(Node n) {
    n.grad = Tensor::zeros(n.val.shape);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
Tape::Node& Tape::node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }

const Tensor& Tape::value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).val; }
const Tensor& Tape::grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

double Tape::scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw DimensionError("Tape::scalar: node is not 1x1, got " + t.shape_str());
    return t.data[0];
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.val = std::move(value);
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    Node n;
    n.val = p.value;
    n.bound = &p;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_2d(ta, "matmul");
    require_2d(tb, "matmul");
    if (ta.cols() != tb.rows()) {
        throw DimensionError("matmul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    }
    Node n;
    matmul_into(ta, tb, n.val);
    n.parent_a = a.id;
    n.parent_b = b.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& B = t.node(self.parent_b);
        const std::size_t nr = A.val.rows(), k = A.val.cols(), m = B.val.cols();
        // dA += G * B^T, dB += A^T * G
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t t2 = 0; t2 < k; ++t2) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j)
                    acc += self.grad.data[i * m + j] * B.val.data[t2 * m + j];
                A.grad.data[i * k + t2] += acc;
            }
        for (std::size_t t2 = 0; t2 < k; ++t2)
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < nr; ++i)
                    acc += A.val.data[i * k + t2] * self.grad.data[i * m + j];
                B.grad.data[t2 * m + j] += acc;
            }
    };
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "add");
    Node n;
    n.val = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.val.data[i] += tb.data[i];
    n.parent_a = a.id;
    n.parent_b = b.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& B = t.node(self.parent_b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            A.grad.data[i] += self.grad.data[i];
            B.grad.data[i] += self.grad.data[i];
        }
    };
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "sub");
    Node n;
    n.val = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.val.data[i] -= tb.data[i];
    n.parent_a = a.id;
    n.parent_b = b.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& B = t.node(self.parent_b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            A.grad.data[i] += self.grad.data[i];
            B.grad.data[i] -= self.grad.data[i];
        }
    };
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "mul");
    Node n;
    n.val = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.val.data[i] *= tb.data[i];
    n.parent_a = a.id;
    n.parent_b = b.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& B = t.node(self.parent_b);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            A.grad.data[i] += self.grad.data[i] * B.val.data[i];
            B.grad.data[i] += self.grad.data[i] * A.val.data[i];
        }
    };
    return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
    const Tensor& ta = value(a);
    const Tensor& tr = value(row);
    if (tr.rows() != 1 || tr.cols() != ta.cols()) {
        throw DimensionError("add_row: shape mismatch " + ta.shape_str() + " vs " + tr.shape_str());
    }
    Node n;
    add_row_into(ta, tr, n.val);
    n.parent_a = a.id;
    n.parent_b = row.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& R = t.node(self.parent_b);
        const std::size_t nr = A.val.rows(), m = A.val.cols();
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                A.grad.data[i * m + j] += self.grad.data[i * m + j];
                R.grad.data[j] += self.grad.data[i * m + j];
            }
    };
    return push(std::move(n));
}

Var Tape::mul_row(Var a, Var row) {
    const Tensor& ta = value(a);
    const Tensor& tr = value(row);
    if (tr.rows() != 1 || tr.cols() != ta.cols()) {
        throw DimensionError("mul_row: shape mismatch " + ta.shape_str() + " vs " + tr.shape_str());
    }
    Node n;
    n.val = ta;
    const std::size_t nr = ta.rows(), m = ta.cols();
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < m; ++j) n.val.data[i * m + j] *= tr.data[j];
    n.parent_a = a.id;
    n.parent_b = row.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& R = t.node(self.parent_b);
        const std::size_t nr2 = A.val.rows(), m2 = A.val.cols();
        for (std::size_t i = 0; i < nr2; ++i)
            for (std::size_t j = 0; j < m2; ++j) {
                A.grad.data[i * m2 + j] += self.grad.data[i * m2 + j] * R.val.data[j];
                R.grad.data[j] += self.grad.data[i * m2 + j] * A.val.data[i * m2 + j];
            }
    };
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v *= c;
    n.parent_a = a.id;
    n.back = [c](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad.data[i] += c * self.grad.data[i];
    };
    return push(std::move(n));
}

Var Tape::add_const(Var a, const Tensor& c) {
    const Tensor& ta = value(a);
    require_same_shape(ta, c, "add_const");
    Node n;
    n.val = ta;
    for (std::size_t i = 0; i < c.size(); ++i) n.val.data[i] += c.data[i];
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, double c) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v += c;
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rows() != 1 || tb.rows() != 1) {
        throw DimensionError("concat_cols: expected row vectors, got " + ta.shape_str() + " and " +
                             tb.shape_str());
    }
    Node n;
    n.val = Tensor::zeros({1, ta.cols() + tb.cols()});
    std::copy(ta.data.begin(), ta.data.end(), n.val.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), n.val.data.begin() + static_cast<long>(ta.cols()));
    n.parent_a = a.id;
    n.parent_b = b.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        Node& B = t.node(self.parent_b);
        const std::size_t ca = A.val.cols();
        for (std::size_t j = 0; j < ca; ++j) A.grad.data[j] += self.grad.data[j];
        for (std::size_t j = 0; j < B.val.cols(); ++j) B.grad.data[j] += self.grad.data[ca + j];
    };
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    relu_into(value(a), n.val);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (A.val.data[i] > 0.0) A.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v = 1.0 / (1.0 + std::exp(-v));
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.val.data[i];
            A.grad.data[i] += self.grad.data[i] * s * (1.0 - s);
        }
    };
    return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
    Node n;
    softmax_rows_into(value(a), n.val);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        const std::size_t nr = self.val.rows(), m = self.val.cols();
        for (std::size_t i = 0; i < nr; ++i) {
            const double* s = self.val.data.data() + i * m;
            const double* g = self.grad.data.data() + i * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g[j] * s[j];
            for (std::size_t j = 0; j < m; ++j) A.grad.data[i * m + j] += s[j] * (g[j] - dot);
        }
    };
    return push(std::move(n));
}

Var Tape::log_softmax_rows(Var a) {
    const Tensor& ta = value(a);
    Node n;
    n.val = ta;
    const std::size_t nr = ta.rows(), m = ta.cols();
    for (std::size_t i = 0; i < nr; ++i) {
        double* row = n.val.data.data() + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < m; ++j) row[j] -= lse;
    }
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        const std::size_t nr2 = self.val.rows(), m2 = self.val.cols();
        for (std::size_t i = 0; i < nr2; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < m2; ++j) gsum += self.grad.data[i * m2 + j];
            for (std::size_t j = 0; j < m2; ++j) {
                const double p = std::exp(self.val.data[i * m2 + j]);
                A.grad.data[i * m2 + j] += self.grad.data[i * m2 + j] - p * gsum;
            }
        }
    };
    return push(std::move(n));
}

Var Tape::mean_rows(Var a) {
    const Tensor& ta = value(a);
    require_2d(ta, "mean_rows");
    const std::size_t nr = ta.rows(), m = ta.cols();
    if (nr == 0) throw DimensionError("mean_rows: empty tensor");
    Node n;
    n.val = Tensor::zeros({1, m});
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < m; ++j) n.val.data[j] += ta.data[i * m + j];
    for (std::size_t j = 0; j < m; ++j) n.val.data[j] /= static_cast<double>(nr);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        const std::size_t nr2 = A.val.rows(), m2 = A.val.cols();
        const double inv = 1.0 / static_cast<double>(nr2);
        for (std::size_t i = 0; i < nr2; ++i)
            for (std::size_t j = 0; j < m2; ++j) A.grad.data[i * m2 + j] += self.grad.data[j] * inv;
    };
    return push(std::move(n));
}

Var Tape::std_rows(Var a) {
    const Tensor& ta = value(a);
    require_2d(ta, "std_rows");
    const std::size_t nr = ta.rows(), m = ta.cols();
    if (nr == 0) throw DimensionError("std_rows: empty tensor");
    Node n;
    n.val = Tensor::zeros({1, m});
    std::vector<double> mean(m, 0.0);
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < m; ++j) mean[j] += ta.data[i * m + j];
    for (std::size_t j = 0; j < m; ++j) mean[j] /= static_cast<double>(nr);
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double d = ta.data[i * m + j] - mean[j];
            n.val.data[j] += d * d;
        }
    for (std::size_t j = 0; j < m; ++j)
        n.val.data[j] = std::sqrt(n.val.data[j] / static_cast<double>(nr));
    n.parent_a = a.id;
    // d std_j / d x_ij = (x_ij - mean_j) / (B * std_j); subgradient 0 when
    // the column is constant.
    n.back = [mean](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        const std::size_t nr2 = A.val.rows(), m2 = A.val.cols();
        for (std::size_t j = 0; j < m2; ++j) {
            const double sd = self.val.data[j];
            if (sd <= 0.0) continue;
            const double coef = self.grad.data[j] / (static_cast<double>(nr2) * sd);
            for (std::size_t i = 0; i < nr2; ++i)
                A.grad.data[i * m2 + j] += coef * (A.val.data[i * m2 + j] - mean[j]);
        }
    };
    return push(std::move(n));
}

Var Tape::sum_all(Var a) {
    Node n;
    double s = 0.0;
    for (double v : value(a).data) s += v;
    n.val = Tensor::scalar(s);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (double& g : A.grad.data) g += self.grad.data[0];
    };
    return push(std::move(n));
}

Var Tape::mean_all(Var a) {
    const std::size_t count = value(a).size();
    Node n;
    double s = 0.0;
    for (double v : value(a).data) s += v;
    n.val = Tensor::scalar(s / static_cast<double>(count));
    n.parent_a = a.id;
    n.back = [count](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        const double inv = self.grad.data[0] / static_cast<double>(count);
        for (double& g : A.grad.data) g += inv;
    };
    return push(std::move(n));
}

Var Tape::abs(Var a) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v = std::fabs(v);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = A.val.data[i];
            if (x > 0.0) A.grad.data[i] += self.grad.data[i];
            else if (x < 0.0) A.grad.data[i] -= self.grad.data[i];
        }
    };
    return push(std::move(n));
}

Var Tape::xlogx(Var a) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v = v > 0.0 ? v * std::log(v) : 0.0;
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = A.val.data[i];
            if (x > 0.0) A.grad.data[i] += self.grad.data[i] * (std::log(x) + 1.0);
        }
    };
    return push(std::move(n));
}

Var Tape::log(Var a) {
    Node n;
    n.val = value(a);
    for (double& v : n.val.data) v = std::log(v);
    n.parent_a = a.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            A.grad.data[i] += self.grad.data[i] / A.val.data[i];
    };
    return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
    const Tensor& z = value(logits);
    require_2d(z, "cross_entropy");
    const std::size_t nr = z.rows(), k = z.cols();
    if (labels.size() != nr) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(nr) + " rows");
    }
    for (int lbl : labels) {
        if (lbl < 0 || static_cast<std::size_t>(lbl) >= k) {
            throw IndexError("cross_entropy: label " + std::to_string(lbl) + " out of [0, " +
                             std::to_string(k) + ")");
        }
    }
    Node n;
    double total = 0.0;
    for (std::size_t i = 0; i < nr; ++i) {
        const double* row = z.data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[static_cast<std::size_t>(labels[i])];
    }
    n.val = Tensor::scalar(total / static_cast<double>(nr));
    n.parent_a = logits.id;
    n.back = [labels](Tape& t, Node& self) {
        Node& Z = t.node(self.parent_a);
        const std::size_t nr2 = Z.val.rows(), k2 = Z.val.cols();
        const double g = self.grad.data[0] / static_cast<double>(nr2);
        for (std::size_t i = 0; i < nr2; ++i) {
            const double* row = Z.val.data.data() + i * k2;
            double mx = row[0];
            for (std::size_t j = 1; j < k2; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < k2; ++j) sum += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < k2; ++j) {
                const double p = std::exp(row[j] - mx) / sum;
                const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                Z.grad.data[i * k2 + j] += g * (p - onehot);
            }
        }
    };
    return push(std::move(n));
}

Var Tape::straight_through(Var soft, Tensor hard) {
    require_same_shape(value(soft), hard, "straight_through");
    Node n;
    n.val = std::move(hard);
    n.parent_a = soft.id;
    n.back = [](Tape& t, Node& self) {
        Node& A = t.node(self.parent_a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(n));
}

void Tape::backward(Var root) {
    if (backward_done_) throw StateError("Tape::backward called twice on one tape");
    Node& r = node(root);
    if (r.val.size() != 1) {
        throw DimensionError("Tape::backward: root must be scalar, got " + r.val.shape_str());
    }
    backward_done_ = true;
    r.grad.data[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.back) n.back(*this, n);
        if (n.bound) {
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                n.bound->grad.data[i] += n.grad.data[i];
        }
    }
}

void Tape::clear() {
    nodes_.clear();
    backward_done_ = false;
}

} // namespace dance
