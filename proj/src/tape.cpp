#include "promptseg/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "promptseg/geometry.hpp"
#include "promptseg/losses.hpp"
#include "promptseg/predictions.hpp"

namespace promptseg {

namespace {

constexpr double kLnEps = 1e-5;    // layernorm variance epsilon

double dsigmoid_clamped(double logit) {
    const double p = sigmoid(logit);
    if (p <= kProbClamp || p >= 1.0 - kProbClamp) return 0.0;
    return p * (1.0 - p);
}

// (src index, weight) pairs for one bilinear output pixel
struct Lerp4 {
    int idx[4];
    double w[4];
};

std::vector<Lerp4> bilinear_table(int sh, int sw, int oh, int ow) {
    std::vector<Lerp4> table(static_cast<size_t>(oh) * ow);
    const double sy = static_cast<double>(sh) / oh;
    const double sx = static_cast<double>(sw) / ow;
    for (int y = 0; y < oh; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, sh - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, sw - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            Lerp4& e = table[static_cast<size_t>(y) * ow + x];
            e.idx[0] = y0 * sw + x0;
            e.idx[1] = y0 * sw + x1;
            e.idx[2] = y1 * sw + x0;
            e.idx[3] = y1 * sw + x1;
            e.w[0] = (1 - wy) * (1 - wx);
            e.w[1] = (1 - wy) * wx;
            e.w[2] = wy * (1 - wx);
            e.w[3] = wy * wx;
        }
    }
    return table;
}

} // namespace

int Tape::push(int rows, int cols) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
    n.grad.assign(n.val.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_shape(Var v, int r, int c, const char* op) const {
    if (node(v).rows != r || node(v).cols != c)
        throw std::logic_error(std::string(op) + ": shape mismatch");
}

Var Tape::input(int rows, int cols, const double* data) {
    const int id = push(rows, cols);
    std::copy(data, data + nodes_[id].val.size(), nodes_[id].val.begin());
    return {id};
}

Var Tape::input(int rows, int cols, std::vector<double> data) {
    const int id = push(rows, cols);
    if (data.size() != nodes_[id].val.size()) throw std::logic_error("input: size mismatch");
    nodes_[id].val = std::move(data);
    return {id};
}

Var Tape::param(Param& p) {
    const int id = push(p.rows, p.cols);
    nodes_[id].val = p.value;
    nodes_[id].external = &p;
    nodes_[id].back = [id](Tape& t) {
        Node& n = t.nodes_[id];
        for (size_t i = 0; i < n.grad.size(); ++i) n.external->grad[i] += n.grad[i];
    };
    return {id};
}

Var Tape::matmul(Var a, Var b) {
    const Node& A = node(a);
    const Node& B = node(b);
    if (A.cols != B.rows) throw std::logic_error("matmul: inner dims");
    const int N = A.rows, K = A.cols, M = B.cols;
    const int id = push(N, M);
    {
        Node& C = nodes_[id];
        for (int i = 0; i < N; ++i) {
            const double* arow = &A.val[static_cast<size_t>(i) * K];
            double* crow = &C.val[static_cast<size_t>(i) * M];
            for (int k = 0; k < K; ++k) {
                const double av = arow[k];
                if (av == 0.0) continue;
                const double* brow = &B.val[static_cast<size_t>(k) * M];
                for (int j = 0; j < M; ++j) crow[j] += av * brow[j];
            }
        }
    }
    nodes_[id].back = [id, ai = a.id, bi = b.id, N, K, M](Tape& t) {
        const auto& dC = t.nodes_[id].grad;
        auto& dA = t.nodes_[ai].grad;
        auto& dB = t.nodes_[bi].grad;
        const auto& Av = t.nodes_[ai].val;
        const auto& Bv = t.nodes_[bi].val;
        // dA += dC * B^T ; dB += A^T * dC
        for (int i = 0; i < N; ++i) {
            const double* dcrow = &dC[static_cast<size_t>(i) * M];
            double* darow = &dA[static_cast<size_t>(i) * K];
            const double* arow = &Av[static_cast<size_t>(i) * K];
            for (int k = 0; k < K; ++k) {
                const double* brow = &Bv[static_cast<size_t>(k) * M];
                double acc = 0.0;
                for (int j = 0; j < M; ++j) acc += dcrow[j] * brow[j];
                darow[k] += acc;
                const double av = arow[k];
                if (av != 0.0) {
                    double* dbrow = &dB[static_cast<size_t>(k) * M];
                    for (int j = 0; j < M; ++j) dbrow[j] += av * dcrow[j];
                }
            }
        }
    };
    return {id};
}

Var Tape::matmul_nt(Var a, Var b) {
    const Node& A = node(a);
    const Node& B = node(b);
    if (A.cols != B.cols) throw std::logic_error("matmul_nt: inner dims");
    const int N = A.rows, K = A.cols, M = B.rows;
    const int id = push(N, M);
    {
        Node& C = nodes_[id];
        for (int i = 0; i < N; ++i) {
            const double* arow = &A.val[static_cast<size_t>(i) * K];
            double* crow = &C.val[static_cast<size_t>(i) * M];
            for (int j = 0; j < M; ++j) {
                const double* brow = &B.val[static_cast<size_t>(j) * K];
                double acc = 0.0;
                for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
                crow[j] = acc;
            }
        }
    }
    nodes_[id].back = [id, ai = a.id, bi = b.id, N, K, M](Tape& t) {
        const auto& dC = t.nodes_[id].grad;
        auto& dA = t.nodes_[ai].grad;
        auto& dB = t.nodes_[bi].grad;
        const auto& Av = t.nodes_[ai].val;
        const auto& Bv = t.nodes_[bi].val;
        // dA += dC * B ; dB += dC^T * A
        for (int i = 0; i < N; ++i) {
            const double* dcrow = &dC[static_cast<size_t>(i) * M];
            double* darow = &dA[static_cast<size_t>(i) * K];
            const double* arow = &Av[static_cast<size_t>(i) * K];
            for (int j = 0; j < M; ++j) {
                const double g = dcrow[j];
                if (g == 0.0) continue;
                const double* brow = &Bv[static_cast<size_t>(j) * K];
                double* dbrow = &dB[static_cast<size_t>(j) * K];
                for (int k = 0; k < K; ++k) {
                    darow[k] += g * brow[k];
                    dbrow[k] += g * arow[k];
                }
            }
        }
    };
    return {id};
}

Var Tape::linear(Var x, Var w, Var b) {
    Var y = matmul(x, w);
    if (b.id < 0) return y;
    const Node& B = node(b);
    if (B.rows != 1 || B.cols != node(y).cols) throw std::logic_error("linear: bias shape");
    const int N = node(y).rows, M = node(y).cols;
    const int id = push(N, M);
    {
        Node& Y = nodes_[id];
        const Node& X = node(y);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j)
                Y.val[static_cast<size_t>(i) * M + j] =
                    X.val[static_cast<size_t>(i) * M + j] + B.val[j];
    }
    nodes_[id].back = [id, xi = y.id, bi = b.id, N, M](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        auto& dB = t.nodes_[bi].grad;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j) {
                const double g = dY[static_cast<size_t>(i) * M + j];
                dX[static_cast<size_t>(i) * M + j] += g;
                dB[j] += g;
            }
    };
    return {id};
}

Var Tape::add(Var a, Var b) {
    const Node& A = node(a);
    check_shape(b, A.rows, A.cols, "add");
    const int id = push(A.rows, A.cols);
    {
        Node& C = nodes_[id];
        const Node& B = node(b);
        for (size_t i = 0; i < C.val.size(); ++i) C.val[i] = A.val[i] + B.val[i];
    }
    nodes_[id].back = [id, ai = a.id, bi = b.id](Tape& t) {
        const auto& dC = t.nodes_[id].grad;
        auto& dA = t.nodes_[ai].grad;
        auto& dB = t.nodes_[bi].grad;
        for (size_t i = 0; i < dC.size(); ++i) {
            dA[i] += dC[i];
            dB[i] += dC[i];
        }
    };
    return {id};
}

Var Tape::add_row(Var x, Var row) {
    const Node& X = node(x);
    check_shape(row, 1, X.cols, "add_row");
    const int N = X.rows, D = X.cols;
    const int id = push(N, D);
    {
        Node& Y = nodes_[id];
        const Node& R = node(row);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j)
                Y.val[static_cast<size_t>(i) * D + j] =
                    X.val[static_cast<size_t>(i) * D + j] + R.val[j];
    }
    nodes_[id].back = [id, xi = x.id, ri = row.id, N, D](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        auto& dR = t.nodes_[ri].grad;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j) {
                const size_t k = static_cast<size_t>(i) * D + j;
                dX[k] += dY[k];
                dR[j] += dY[k];
            }
    };
    return {id};
}

Var Tape::mul_row(Var x, Var gate) {
    const Node& X = node(x);
    check_shape(gate, 1, X.cols, "mul_row");
    const int N = X.rows, D = X.cols;
    const int id = push(N, D);
    {
        Node& Y = nodes_[id];
        const Node& G = node(gate);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j)
                Y.val[static_cast<size_t>(i) * D + j] =
                    X.val[static_cast<size_t>(i) * D + j] * G.val[j];
    }
    nodes_[id].back = [id, xi = x.id, gi = gate.id, N, D](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        auto& dG = t.nodes_[gi].grad;
        const auto& Xv = t.nodes_[xi].val;
        const auto& Gv = t.nodes_[gi].val;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < D; ++j) {
                const size_t k = static_cast<size_t>(i) * D + j;
                dX[k] += dY[k] * Gv[j];
                dG[j] += dY[k] * Xv[k];
            }
    };
    return {id};
}

Var Tape::affine(Var x, double scale, double shift) {
    const Node& X = node(x);
    const int id = push(X.rows, X.cols);
    {
        Node& Y = nodes_[id];
        for (size_t i = 0; i < Y.val.size(); ++i) Y.val[i] = X.val[i] * scale + shift;
    }
    nodes_[id].back = [id, xi = x.id, scale](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * scale;
    };
    return {id};
}

Var Tape::gelu(Var x) {
    const Node& X = node(x);
    const int id = push(X.rows, X.cols);
    {
        Node& Y = nodes_[id];
        for (size_t i = 0; i < Y.val.size(); ++i) {
            const double v = X.val[i];
            Y.val[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
        }
    }
    nodes_[id].back = [id, xi = x.id](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        const auto& Xv = t.nodes_[xi].val;
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (size_t i = 0; i < dY.size(); ++i) {
            const double v = Xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            dX[i] += dY[i] * (cdf + v * pdf);
        }
    };
    return {id};
}

Var Tape::sigmoid(Var x) {
    const Node& X = node(x);
    const int id = push(X.rows, X.cols);
    {
        Node& Y = nodes_[id];
        for (size_t i = 0; i < Y.val.size(); ++i) Y.val[i] = 1.0 / (1.0 + std::exp(-X.val[i]));
    }
    nodes_[id].back = [id, xi = x.id](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        const auto& Yv = t.nodes_[id].val;
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * Yv[i] * (1.0 - Yv[i]);
    };
    return {id};
}

Var Tape::softmax_rows(Var x) {
    const Node& X = node(x);
    const int N = X.rows, M = X.cols;
    const int id = push(N, M);
    {
        Node& Y = nodes_[id];
        for (int i = 0; i < N; ++i) {
            const double* row = &X.val[static_cast<size_t>(i) * M];
            double* out = &Y.val[static_cast<size_t>(i) * M];
            double mx = row[0];
            for (int j = 1; j < M; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (int j = 0; j < M; ++j) {
                out[j] = std::exp(row[j] - mx);
                sum += out[j];
            }
            for (int j = 0; j < M; ++j) out[j] /= sum;
        }
    }
    nodes_[id].back = [id, xi = x.id, N, M](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        const auto& Yv = t.nodes_[id].val;
        auto& dX = t.nodes_[xi].grad;
        for (int i = 0; i < N; ++i) {
            const double* p = &Yv[static_cast<size_t>(i) * M];
            const double* dy = &dY[static_cast<size_t>(i) * M];
            double dot = 0.0;
            for (int j = 0; j < M; ++j) dot += dy[j] * p[j];
            double* dx = &dX[static_cast<size_t>(i) * M];
            for (int j = 0; j < M; ++j) dx[j] += p[j] * (dy[j] - dot);
        }
    };
    return {id};
}

Var Tape::layernorm(Var x, Var gain, Var bias) {
    const Node& X = node(x);
    const int N = X.rows, D = X.cols;
    check_shape(gain, 1, D, "layernorm");
    check_shape(bias, 1, D, "layernorm");
    const int id = push(N, D);
    {
        Node& Y = nodes_[id];
        const Node& G = node(gain);
        const Node& B = node(bias);
        for (int i = 0; i < N; ++i) {
            const double* row = &X.val[static_cast<size_t>(i) * D];
            double mean = 0.0;
            for (int j = 0; j < D; ++j) mean += row[j];
            mean /= D;
            double var = 0.0;
            for (int j = 0; j < D; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= D;
            const double inv = 1.0 / std::sqrt(var + kLnEps);
            double* out = &Y.val[static_cast<size_t>(i) * D];
            for (int j = 0; j < D; ++j) out[j] = (row[j] - mean) * inv * G.val[j] + B.val[j];
        }
    }
    nodes_[id].back = [id, xi = x.id, gi = gain.id, bi = bias.id, N, D](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        const auto& Xv = t.nodes_[xi].val;
        const auto& Gv = t.nodes_[gi].val;
        auto& dX = t.nodes_[xi].grad;
        auto& dG = t.nodes_[gi].grad;
        auto& dB = t.nodes_[bi].grad;
        for (int i = 0; i < N; ++i) {
            const double* row = &Xv[static_cast<size_t>(i) * D];
            const double* dy = &dY[static_cast<size_t>(i) * D];
            double mean = 0.0;
            for (int j = 0; j < D; ++j) mean += row[j];
            mean /= D;
            double var = 0.0;
            for (int j = 0; j < D; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= D;
            const double inv = 1.0 / std::sqrt(var + kLnEps);
            // accumulate gain/bias grads and the two reduction terms
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < D; ++j) {
                const double xhat = (row[j] - mean) * inv;
                const double dxhat = dy[j] * Gv[j];
                dG[j] += dy[j] * xhat;
                dB[j] += dy[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            double* dx = &dX[static_cast<size_t>(i) * D];
            for (int j = 0; j < D; ++j) {
                const double xhat = (row[j] - mean) * inv;
                const double dxhat = dy[j] * Gv[j];
                dx[j] += inv * (dxhat - sum_dxhat / D - xhat * sum_dxhat_xhat / D);
            }
        }
    };
    return {id};
}

Var Tape::gather_rows(Var x, std::vector<int> idx) {
    const Node& X = node(x);
    const int D = X.cols;
    const int K = static_cast<int>(idx.size());
    const int id = push(K, D);
    {
        Node& Y = nodes_[id];
        for (int k = 0; k < K; ++k) {
            if (idx[k] < 0 || idx[k] >= X.rows) throw std::logic_error("gather_rows: index");
            std::copy_n(&X.val[static_cast<size_t>(idx[k]) * D], D,
                        &Y.val[static_cast<size_t>(k) * D]);
        }
    }
    nodes_[id].back = [id, xi = x.id, idx = std::move(idx), D](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        for (size_t k = 0; k < idx.size(); ++k)
            for (int j = 0; j < D; ++j)
                dX[static_cast<size_t>(idx[k]) * D + j] += dY[k * D + j];
    };
    return {id};
}

Var Tape::upsample_rows(Var x, int sh, int sw, int oh, int ow) {
    const Node& X = node(x);
    if (X.cols != sh * sw) throw std::logic_error("upsample_rows: source size");
    const int N = X.rows;
    auto table = bilinear_table(sh, sw, oh, ow);
    const int P = oh * ow;
    const int id = push(N, P);
    {
        Node& Y = nodes_[id];
        for (int i = 0; i < N; ++i) {
            const double* src = &X.val[static_cast<size_t>(i) * X.cols];
            double* out = &Y.val[static_cast<size_t>(i) * P];
            for (int p = 0; p < P; ++p) {
                const Lerp4& e = table[p];
                out[p] = e.w[0] * src[e.idx[0]] + e.w[1] * src[e.idx[1]] +
                         e.w[2] * src[e.idx[2]] + e.w[3] * src[e.idx[3]];
            }
        }
    }
    nodes_[id].back = [id, xi = x.id, table = std::move(table), N, P,
                       S = sh * sw](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        for (int i = 0; i < N; ++i) {
            const double* dy = &dY[static_cast<size_t>(i) * P];
            double* dx = &dX[static_cast<size_t>(i) * S];
            for (int p = 0; p < P; ++p) {
                const Lerp4& e = table[p];
                const double g = dy[p];
                if (g == 0.0) continue;
                dx[e.idx[0]] += g * e.w[0];
                dx[e.idx[1]] += g * e.w[1];
                dx[e.idx[2]] += g * e.w[2];
                dx[e.idx[3]] += g * e.w[3];
            }
        }
    };
    return {id};
}

Var Tape::upsample_grid_rows(Var x, int gh, int gw, int oh, int ow) {
    const Node& X = node(x);
    if (X.rows != gh * gw) throw std::logic_error("upsample_grid_rows: source rows");
    const int D = X.cols;
    auto table = bilinear_table(gh, gw, oh, ow);
    const int P = oh * ow;
    const int id = push(P, D);
    {
        Node& Y = nodes_[id];
        for (int p = 0; p < P; ++p) {
            const Lerp4& e = table[p];
            double* out = &Y.val[static_cast<size_t>(p) * D];
            for (int q = 0; q < 4; ++q) {
                const double* src = &X.val[static_cast<size_t>(e.idx[q]) * D];
                const double w = e.w[q];
                for (int j = 0; j < D; ++j) out[j] += w * src[j];
            }
        }
    }
    nodes_[id].back = [id, xi = x.id, table = std::move(table), P, D](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        for (int p = 0; p < P; ++p) {
            const Lerp4& e = table[p];
            const double* dy = &dY[static_cast<size_t>(p) * D];
            for (int q = 0; q < 4; ++q) {
                double* dx = &dX[static_cast<size_t>(e.idx[q]) * D];
                const double w = e.w[q];
                for (int j = 0; j < D; ++j) dx[j] += w * dy[j];
            }
        }
    };
    return {id};
}

Var Tape::add_scalar(Var x, Var s) {
    const Node& X = node(x);
    check_shape(s, 1, 1, "add_scalar");
    const int id = push(X.rows, X.cols);
    {
        Node& Y = nodes_[id];
        const double sv = node(s).val[0];
        for (size_t i = 0; i < Y.val.size(); ++i) Y.val[i] = X.val[i] + sv;
    }
    nodes_[id].back = [id, xi = x.id, si = s.id](Tape& t) {
        const auto& dY = t.nodes_[id].grad;
        auto& dX = t.nodes_[xi].grad;
        double acc = 0.0;
        for (size_t i = 0; i < dY.size(); ++i) {
            dX[i] += dY[i];
            acc += dY[i];
        }
        t.nodes_[si].grad[0] += acc;
    };
    return {id};
}

Var Tape::focal_bce_sum(Var logits, std::vector<int> y, double alpha, double gamma) {
    const Node& X = node(logits);
    if (X.val.size() != y.size()) throw std::logic_error("focal_bce_sum: size");
    const int id = push(1, 1);
    std::vector<double> dl(y.size());
    double total = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        double d;
        total += focal_bce_logit(X.val[i], y[i], alpha, gamma, &d);
        dl[i] = d;
    }
    nodes_[id].val[0] = total;
    nodes_[id].back = [id, xi = logits.id, dl = std::move(dl)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dl.size(); ++i) dX[i] += g * dl[i];
    };
    return {id};
}

Var Tape::presence_bce_sum(Var logits, std::vector<int> y, double pos_weight) {
    const Node& X = node(logits);
    if (X.val.size() != y.size()) throw std::logic_error("presence_bce_sum: size");
    const int id = push(1, 1);
    std::vector<double> dl(y.size());
    double total = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        double d;
        total += presence_loss_logit(X.val[i], y[i], pos_weight, &d);
        dl[i] = d;
    }
    nodes_[id].val[0] = total;
    nodes_[id].back = [id, xi = logits.id, dl = std::move(dl)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dl.size(); ++i) dX[i] += g * dl[i];
    };
    return {id};
}

namespace {

NormBox row_to_box(const double* r) { return NormBox{r[0], r[1], r[2], r[3]}; }

} // namespace

Var Tape::box_l1_sum(Var boxes, std::vector<int> rows,
                     std::vector<std::array<double, 4>> targets) {
    const Node& X = node(boxes);
    if (X.cols != 4 || rows.size() != targets.size()) throw std::logic_error("box_l1_sum");
    const int id = push(1, 1);
    std::vector<std::array<double, 4>> grads(rows.size());
    double total = 0.0;
    for (size_t k = 0; k < rows.size(); ++k) {
        BoxPairGrad g;
        const NormBox pred = row_to_box(&X.val[static_cast<size_t>(rows[k]) * 4]);
        const NormBox tgt{targets[k][0], targets[k][1], targets[k][2], targets[k][3]};
        total += l1_box_grad(pred, tgt, &g);
        grads[k] = g.da;
    }
    nodes_[id].val[0] = total;
    nodes_[id].back = [id, xi = boxes.id, rows = std::move(rows),
                       grads = std::move(grads)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t k = 0; k < rows.size(); ++k)
            for (int j = 0; j < 4; ++j)
                dX[static_cast<size_t>(rows[k]) * 4 + j] += g * grads[k][j];
    };
    return {id};
}

Var Tape::box_giou_sum(Var boxes, std::vector<int> rows,
                       std::vector<std::array<double, 4>> targets) {
    const Node& X = node(boxes);
    if (X.cols != 4 || rows.size() != targets.size()) throw std::logic_error("box_giou_sum");
    const int id = push(1, 1);
    std::vector<std::array<double, 4>> grads(rows.size());
    double total = 0.0;
    for (size_t k = 0; k < rows.size(); ++k) {
        BoxPairGrad g;
        const NormBox pred = row_to_box(&X.val[static_cast<size_t>(rows[k]) * 4]);
        const NormBox tgt{targets[k][0], targets[k][1], targets[k][2], targets[k][3]};
        total += 1.0 - box_giou_grad(pred, tgt, &g);
        for (int j = 0; j < 4; ++j) grads[k][j] = -g.da[j];    // d(1-giou)
    }
    nodes_[id].val[0] = total;
    nodes_[id].back = [id, xi = boxes.id, rows = std::move(rows),
                       grads = std::move(grads)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t k = 0; k < rows.size(); ++k)
            for (int j = 0; j < 4; ++j)
                dX[static_cast<size_t>(rows[k]) * 4 + j] += g * grads[k][j];
    };
    return {id};
}

Var Tape::mask_focal_mean(Var logits, std::vector<uint8_t> gt, double alpha, double gamma) {
    const Node& X = node(logits);
    if (X.val.size() != gt.size()) throw std::logic_error("mask_focal_mean: size");
    const int id = push(1, 1);
    const double inv = 1.0 / static_cast<double>(gt.size());
    std::vector<double> dl(gt.size());
    double total = 0.0;
    for (size_t i = 0; i < gt.size(); ++i) {
        double d;
        total += focal_bce_logit(X.val[i], gt[i] ? 1 : 0, alpha, gamma, &d);
        dl[i] = d * inv;
    }
    nodes_[id].val[0] = total * inv;
    nodes_[id].back = [id, xi = logits.id, dl = std::move(dl)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dl.size(); ++i) dX[i] += g * dl[i];
    };
    return {id};
}

Var Tape::mask_dice(Var logits, std::vector<uint8_t> gt, double eps) {
    const Node& X = node(logits);
    if (X.val.size() != gt.size()) throw std::logic_error("mask_dice: size");
    const int id = push(1, 1);
    std::vector<double> dl;
    nodes_[id].val[0] = dice_loss_logits(X.val, gt, eps, &dl);
    nodes_[id].back = [id, xi = logits.id, dl = std::move(dl)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& dX = t.nodes_[xi].grad;
        for (size_t i = 0; i < dl.size(); ++i) dX[i] += g * dl[i];
    };
    return {id};
}

Var Tape::max_confidence_bce(Var class_logits, Var presence_logits, int target) {
    const Node& C = node(class_logits);
    const Node& P = node(presence_logits);
    if (C.val.size() != P.val.size()) throw std::logic_error("max_confidence_bce: size");
    const int n = static_cast<int>(C.val.size());
    int best = 0;
    double best_conf = -1.0;
    for (int i = 0; i < n; ++i) {
        const double conf = sigmoid_clamped(C.val[i]) * sigmoid_clamped(P.val[i]);
        if (conf > best_conf) {
            best_conf = conf;
            best = i;
        }
    }
    const double q = std::clamp(best_conf, kProbClamp, 1.0 - kProbClamp);
    const int id = push(1, 1);
    nodes_[id].val[0] = target ? -std::log(q) : -std::log(1.0 - q);

    const double dq = (best_conf <= kProbClamp || best_conf >= 1.0 - kProbClamp)
                          ? 0.0
                          : (target ? -1.0 / q : 1.0 / (1.0 - q));
    const double sc = sigmoid_clamped(C.val[best]);
    const double sp = sigmoid_clamped(P.val[best]);
    const double dcls = dq * sp * dsigmoid_clamped(C.val[best]);
    const double dpres = dq * sc * dsigmoid_clamped(P.val[best]);
    nodes_[id].back = [id, ci = class_logits.id, pi = presence_logits.id, best, dcls,
                       dpres](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        t.nodes_[ci].grad[best] += g * dcls;
        t.nodes_[pi].grad[best] += g * dpres;
    };
    return {id};
}

Var Tape::weighted_sum(const std::vector<std::pair<Var, double>>& terms) {
    const int id = push(1, 1);
    double total = 0.0;
    std::vector<std::pair<int, double>> parents;
    parents.reserve(terms.size());
    for (const auto& [v, c] : terms) {
        if (node(v).val.size() != 1) throw std::logic_error("weighted_sum: non-scalar term");
        total += c * node(v).val[0];
        parents.emplace_back(v.id, c);
    }
    nodes_[id].val[0] = total;
    nodes_[id].back = [id, parents = std::move(parents)](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        for (auto [pid, c] : parents) t.nodes_[pid].grad[0] += g * c;
    };
    return {id};
}

void Tape::backward(Var out, double seed) {
    if (node(out).val.size() != 1) throw std::logic_error("backward: output must be scalar");
    nodes_[out.id].grad[0] += seed;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back(*this);
}

} // namespace promptseg
