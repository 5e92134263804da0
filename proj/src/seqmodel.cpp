#include "cotlab/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace cotlab {

namespace {

constexpr double kRmsEps = 1e-8;

// out[i] = sum_j W[i*in + j] * x[j]
void matvec(const double* W, const double* x, int out_dim, int in_dim, double* out) {
    for (int i = 0; i < out_dim; ++i) {
        const double* row = W + static_cast<int64_t>(i) * in_dim;
        double acc = 0.0;
        for (int j = 0; j < in_dim; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
}

// out[j] += sum_i W[i*in + j] * g[i]   (transpose apply)
void matvec_t_acc(const double* W, const double* g, int out_dim, int in_dim, double* out) {
    for (int i = 0; i < out_dim; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* row = W + static_cast<int64_t>(i) * in_dim;
        for (int j = 0; j < in_dim; ++j) out[j] += row[j] * gi;
    }
}

// dW[i*in + j] += g[i] * x[j]
void outer_acc(double* dW, const double* g, const double* x, int out_dim, int in_dim) {
    for (int i = 0; i < out_dim; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* row = dW + static_cast<int64_t>(i) * in_dim;
        for (int j = 0; j < in_dim; ++j) row[j] += gi * x[j];
    }
}

double rmsnorm(const double* x, const double* g, int d, double* out) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += x[i] * x[i];
    ms /= d;
    double inv = 1.0 / std::sqrt(ms + kRmsEps);
    for (int i = 0; i < d; ++i) out[i] = x[i] * inv * g[i];
    return inv;
}

// Given dout, accumulates dx and dg for out_i = x_i * inv * g_i.
void rmsnorm_backward(const double* x, const double* g, double inv, int d, const double* dout,
                      double* dx_acc, double* dg_acc) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += dout[i] * g[i] * x[i];
    const double k = inv * inv * inv * dot / d;
    for (int i = 0; i < d; ++i) {
        dx_acc[i] += dout[i] * g[i] * inv - x[i] * k;
        dg_acc[i] += dout[i] * x[i] * inv;
    }
}

struct LayerOffsets {
    int64_t g1, wq, wk, wv, wo, g2, w1, w2;
};

struct ParamLayout {
    int64_t tok_emb = 0, pos_emb = 0;
    std::vector<LayerOffsets> layers;
    int64_t gf = 0, wout = 0, total = 0;

    explicit ParamLayout(const ArchConfig& a) {
        int64_t d = a.d_model, ff = a.d_ff, V = a.vocab_size, C = a.context_len;
        int64_t off = 0;
        tok_emb = off;
        off += V * d;
        pos_emb = off;
        off += C * d;
        layers.resize(static_cast<size_t>(a.n_layers));
        for (auto& L : layers) {
            L.g1 = off; off += d;
            L.wq = off; off += d * d;
            L.wk = off; off += d * d;
            L.wv = off; off += d * d;
            L.wo = off; off += d * d;
            L.g2 = off; off += d;
            L.w1 = off; off += ff * d;
            L.w2 = off; off += d * ff;
        }
        gf = off;
        off += d;
        wout = off;
        off += V * d;
        total = off;
    }
};

struct Model {
    const ArchConfig& arch;
    const double* p;
    ParamLayout lay;

    explicit Model(const Checkpoint& c) : arch(c.arch), p(c.params.data()), lay(c.arch) {
        if (static_cast<int64_t>(c.params.size()) != lay.total)
            throw DataError("checkpoint parameter count does not match architecture");
    }
    const double* at(int64_t off) const { return p + off; }
};

struct LayerCache {
    std::vector<double> xin, a, q, k, v, attp, omix, xa, b, h1;
    std::vector<double> inv1, inv2;
};

struct FwdCache {
    std::vector<int> toks;
    std::vector<LayerCache> layers;
    std::vector<double> xfinal;  // input to the final norm, per position
    std::vector<double> y, invf;
    int row0 = 0;                // first predicting position with a stored probs row
    std::vector<double> probs;   // [n_rows][V]
};

// Token-by-token forward pass. Sampling, scoring and the training forward all
// run through this class, so their probabilities agree bit-for-bit. When
// `record` is set, everything the backward pass needs is kept.
class SeqForward {
  public:
    SeqForward(const Model& m, int capacity, bool record) : m_(m), record_(record), cap_(capacity) {
        const int d = m_.arch.d_model, ff = m_.arch.d_ff, H = m_.arch.n_heads;
        x_.assign(static_cast<size_t>(d), 0.0);
        a_.assign(static_cast<size_t>(d), 0.0);
        h1_.assign(static_cast<size_t>(ff), 0.0);
        r_.assign(static_cast<size_t>(ff), 0.0);
        tmp_.assign(static_cast<size_t>(d), 0.0);
        omix_.assign(static_cast<size_t>(d), 0.0);
        kc_.resize(static_cast<size_t>(m_.arch.n_layers));
        vc_.resize(static_cast<size_t>(m_.arch.n_layers));
        for (auto& kv : kc_) kv.reserve(static_cast<size_t>(cap_) * d);
        for (auto& kv : vc_) kv.reserve(static_cast<size_t>(cap_) * d);
        if (record_) {
            cache_.layers.resize(static_cast<size_t>(m_.arch.n_layers));
            for (auto& L : cache_.layers) {
                size_t td = static_cast<size_t>(cap_) * d;
                L.xin.reserve(td); L.a.reserve(td); L.q.reserve(td);
                L.omix.reserve(td); L.xa.reserve(td); L.b.reserve(td);
                L.h1.reserve(static_cast<size_t>(cap_) * ff);
                L.attp.assign(static_cast<size_t>(H) * cap_ * cap_, 0.0);
                L.inv1.reserve(static_cast<size_t>(cap_));
                L.inv2.reserve(static_cast<size_t>(cap_));
            }
            cache_.xfinal.reserve(static_cast<size_t>(cap_) * d);
            cache_.y.reserve(static_cast<size_t>(cap_) * d);
            cache_.invf.reserve(static_cast<size_t>(cap_));
        }
    }

    int len() const { return t_ + 1; }

    void push(int tok) {
        const int d = m_.arch.d_model, ff = m_.arch.d_ff, H = m_.arch.n_heads;
        const int hd = d / H;
        const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
        if (tok < 0 || tok >= m_.arch.vocab_size) throw DataError("token id outside vocabulary");
        ++t_;
        if (t_ >= cap_) throw DataError("sequence exceeds context length");
        if (record_) cache_.toks.push_back(tok);

        const double* te = m_.at(m_.lay.tok_emb) + static_cast<int64_t>(tok) * d;
        const double* pe = m_.at(m_.lay.pos_emb) + static_cast<int64_t>(t_) * d;
        for (int i = 0; i < d; ++i) x_[i] = te[i] + pe[i];

        for (int l = 0; l < m_.arch.n_layers; ++l) {
            const auto& off = m_.lay.layers[static_cast<size_t>(l)];
            LayerCache* lc = record_ ? &cache_.layers[static_cast<size_t>(l)] : nullptr;
            if (lc) lc->xin.insert(lc->xin.end(), x_.begin(), x_.end());

            double inv1 = rmsnorm(x_.data(), m_.at(off.g1), d, a_.data());
            if (lc) {
                lc->a.insert(lc->a.end(), a_.begin(), a_.end());
                lc->inv1.push_back(inv1);
            }

            auto& kcache = kc_[static_cast<size_t>(l)];
            auto& vcache = vc_[static_cast<size_t>(l)];
            size_t base = kcache.size();
            kcache.resize(base + static_cast<size_t>(d));
            vcache.resize(base + static_cast<size_t>(d));
            std::vector<double> q(static_cast<size_t>(d));
            matvec(m_.at(off.wq), a_.data(), d, d, q.data());
            matvec(m_.at(off.wk), a_.data(), d, d, kcache.data() + base);
            matvec(m_.at(off.wv), a_.data(), d, d, vcache.data() + base);
            if (lc) lc->q.insert(lc->q.end(), q.begin(), q.end());

            // causal attention over cached positions 0..t_
            const int T = t_ + 1;
            std::vector<double> scores(static_cast<size_t>(T));
            for (int h = 0; h < H; ++h) {
                const int hoff = h * hd;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < T; ++j) {
                    const double* kj = kcache.data() + static_cast<size_t>(j) * d + hoff;
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) s += q[static_cast<size_t>(hoff + c)] * kj[c];
                    s *= inv_sqrt_hd;
                    scores[static_cast<size_t>(j)] = s;
                    if (s > mx) mx = s;
                }
                double z = 0.0;
                for (int j = 0; j < T; ++j) {
                    double e = std::exp(scores[static_cast<size_t>(j)] - mx);
                    scores[static_cast<size_t>(j)] = e;
                    z += e;
                }
                const double invz = 1.0 / z;
                for (int c = 0; c < hd; ++c) omix_[static_cast<size_t>(hoff + c)] = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double pj = scores[static_cast<size_t>(j)] * invz;
                    if (lc)
                        lc->attp[(static_cast<size_t>(h) * cap_ + static_cast<size_t>(t_)) * cap_ +
                                 static_cast<size_t>(j)] = pj;
                    const double* vj = vcache.data() + static_cast<size_t>(j) * d + hoff;
                    for (int c = 0; c < hd; ++c) omix_[static_cast<size_t>(hoff + c)] += pj * vj[c];
                }
            }
            if (lc) lc->omix.insert(lc->omix.end(), omix_.begin(), omix_.end());

            matvec(m_.at(off.wo), omix_.data(), d, d, tmp_.data());
            for (int i = 0; i < d; ++i) x_[i] += tmp_[i];
            if (lc) lc->xa.insert(lc->xa.end(), x_.begin(), x_.end());

            double inv2 = rmsnorm(x_.data(), m_.at(off.g2), d, a_.data());
            if (lc) {
                lc->b.insert(lc->b.end(), a_.begin(), a_.end());
                lc->inv2.push_back(inv2);
            }
            matvec(m_.at(off.w1), a_.data(), ff, d, h1_.data());
            if (lc) lc->h1.insert(lc->h1.end(), h1_.begin(), h1_.end());
            for (int i = 0; i < ff; ++i) r_[static_cast<size_t>(i)] = h1_[static_cast<size_t>(i)] > 0.0 ? h1_[static_cast<size_t>(i)] : 0.0;
            matvec(m_.at(off.w2), r_.data(), d, ff, tmp_.data());
            for (int i = 0; i < d; ++i) x_[i] += tmp_[i];
        }

        if (record_) cache_.xfinal.insert(cache_.xfinal.end(), x_.begin(), x_.end());
        double invf = rmsnorm(x_.data(), m_.at(m_.lay.gf), d, a_.data());
        y_ = a_;
        if (record_) {
            cache_.y.insert(cache_.y.end(), y_.begin(), y_.end());
            cache_.invf.push_back(invf);
        }
    }

    // Log-softmax over next tokens given everything pushed so far.
    std::vector<double> logprob_row() {
        const int d = m_.arch.d_model, V = m_.arch.vocab_size;
        std::vector<double> row(static_cast<size_t>(V));
        matvec(m_.at(m_.lay.wout), y_.data(), V, d, row.data());
        double mx = row[0];
        for (int v = 1; v < V; ++v) mx = std::max(mx, row[static_cast<size_t>(v)]);
        double z = 0.0;
        for (int v = 0; v < V; ++v) z += std::exp(row[static_cast<size_t>(v)] - mx);
        const double lse = mx + std::log(z);
        for (int v = 0; v < V; ++v) row[static_cast<size_t>(v)] -= lse;
        return row;
    }

    void record_prob_row(int pos, const std::vector<double>& logprob) {
        if (!record_) return;
        if (cache_.probs.empty()) cache_.row0 = pos;
        for (double lp : logprob) cache_.probs.push_back(std::exp(lp));
    }

    FwdCache take_cache() { return std::move(cache_); }

  private:
    const Model& m_;
    bool record_;
    int cap_;
    int t_ = -1;
    std::vector<double> x_, a_, h1_, r_, tmp_, omix_, y_;
    std::vector<std::vector<double>> kc_, vc_;
    FwdCache cache_;
};

// Backward pass for value = coeff * sum of realized-token log-probs at the
// recorded rows. Accumulates into grad (layout per ParamLayout).
void backward_seq(const Model& m, const FwdCache& c, int prompt_len, double coeff,
                  std::vector<double>& grad) {
    const int d = m.arch.d_model, ff = m.arch.d_ff, H = m.arch.n_heads, V = m.arch.vocab_size;
    const int hd = d / H;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const int T = static_cast<int>(c.toks.size());
    const int cap = [&] {
        // attp was allocated with the forward capacity; recover it
        size_t per_head = c.layers.empty() ? 0 : c.layers[0].attp.size() / static_cast<size_t>(H);
        return static_cast<int>(std::sqrt(static_cast<double>(per_head)) + 0.5);
    }();
    double* g = grad.data();

    std::vector<double> dx(static_cast<size_t>(T) * d, 0.0);  // grad wrt layer output / xin[l+1]
    std::vector<double> dy(static_cast<size_t>(d));
    std::vector<double> dlogits(static_cast<size_t>(V));

    // Output head + final norm, predicting positions only.
    const int n_rows = static_cast<int>(c.invf.empty() ? 0 : c.probs.size() / static_cast<size_t>(V));
    for (int r = 0; r < n_rows; ++r) {
        const int pos = c.row0 + r;
        const int target = c.toks[static_cast<size_t>(pos + 1)];
        const double* probs = c.probs.data() + static_cast<size_t>(r) * V;
        for (int v = 0; v < V; ++v) dlogits[static_cast<size_t>(v)] = -coeff * probs[v];
        dlogits[static_cast<size_t>(target)] += coeff;
        const double* y = c.y.data() + static_cast<size_t>(pos) * d;
        std::fill(dy.begin(), dy.end(), 0.0);
        matvec_t_acc(m.at(m.lay.wout), dlogits.data(), V, d, dy.data());
        outer_acc(g + m.lay.wout, dlogits.data(), y, V, d);
        rmsnorm_backward(c.xfinal.data() + static_cast<size_t>(pos) * d, m.at(m.lay.gf),
                         c.invf[static_cast<size_t>(pos)], d, dy.data(),
                         dx.data() + static_cast<size_t>(pos) * d, g + m.lay.gf);
    }
    (void)prompt_len;

    std::vector<double> dxa(static_cast<size_t>(T) * d);
    std::vector<double> dq(static_cast<size_t>(T) * d);
    std::vector<double> dk(static_cast<size_t>(T) * d);
    std::vector<double> dv(static_cast<size_t>(T) * d);
    std::vector<double> do_(static_cast<size_t>(T) * d);
    std::vector<double> dr(static_cast<size_t>(ff));
    std::vector<double> dh1(static_cast<size_t>(ff));
    std::vector<double> dp(static_cast<size_t>(T));

    for (int l = m.arch.n_layers - 1; l >= 0; --l) {
        const auto& off = m.lay.layers[static_cast<size_t>(l)];
        const auto& lc = c.layers[static_cast<size_t>(l)];

        // MLP half: xout = xa + W2 relu(W1 ln2(xa))
        for (int t = 0; t < T; ++t) {
            const double* dxout = dx.data() + static_cast<size_t>(t) * d;
            const double* h1 = lc.h1.data() + static_cast<size_t>(t) * ff;
            const double* b = lc.b.data() + static_cast<size_t>(t) * d;
            std::fill(dr.begin(), dr.end(), 0.0);
            matvec_t_acc(m.at(off.w2), dxout, d, ff, dr.data());
            for (int i = 0; i < ff; ++i) {
                const double hi = h1[i];
                dh1[static_cast<size_t>(i)] = hi > 0.0 ? dr[static_cast<size_t>(i)] : 0.0;
            }
            {
                // dW2 += dxout (x) relu(h1)
                double* dW2 = g + off.w2;
                for (int i = 0; i < d; ++i) {
                    const double gi = dxout[i];
                    if (gi == 0.0) continue;
                    double* row = dW2 + static_cast<int64_t>(i) * ff;
                    for (int j = 0; j < ff; ++j) {
                        const double rj = h1[j] > 0.0 ? h1[j] : 0.0;
                        row[j] += gi * rj;
                    }
                }
            }
            outer_acc(g + off.w1, dh1.data(), b, ff, d);
            double* dxa_t = dxa.data() + static_cast<size_t>(t) * d;
            std::copy(dxout, dxout + d, dxa_t);  // residual branch
            std::vector<double> db(static_cast<size_t>(d), 0.0);
            matvec_t_acc(m.at(off.w1), dh1.data(), ff, d, db.data());
            rmsnorm_backward(lc.xa.data() + static_cast<size_t>(t) * d, m.at(off.g2),
                             lc.inv2[static_cast<size_t>(t)], d, db.data(), dxa_t, g + off.g2);
        }

        // Attention half: xa = xin + Wo * concat_heads(sum_j p[t,j] v[j])
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int t = 0; t < T; ++t) {
            const double* dxa_t = dxa.data() + static_cast<size_t>(t) * d;
            double* do_t = do_.data() + static_cast<size_t>(t) * d;
            std::fill(do_t, do_t + d, 0.0);
            matvec_t_acc(m.at(off.wo), dxa_t, d, d, do_t);
            outer_acc(g + off.wo, dxa_t, lc.omix.data() + static_cast<size_t>(t) * d, d, d);
        }
        for (int h = 0; h < H; ++h) {
            const int hoff = h * hd;
            for (int t = 0; t < T; ++t) {
                const double* do_t = do_.data() + static_cast<size_t>(t) * d + hoff;
                const double* prow =
                    lc.attp.data() + (static_cast<size_t>(h) * cap + static_cast<size_t>(t)) * cap;
                double dsum = 0.0;
                for (int j = 0; j <= t; ++j) {
                    const double* vj = lc.v.data() + static_cast<size_t>(j) * d + hoff;
                    double acc = 0.0;
                    for (int cdim = 0; cdim < hd; ++cdim) acc += do_t[cdim] * vj[cdim];
                    dp[static_cast<size_t>(j)] = acc;
                    dsum += prow[j] * acc;
                    double* dvj = dv.data() + static_cast<size_t>(j) * d + hoff;
                    for (int cdim = 0; cdim < hd; ++cdim) dvj[cdim] += prow[j] * do_t[cdim];
                }
                const double* qt = lc.q.data() + static_cast<size_t>(t) * d + hoff;
                double* dqt = dq.data() + static_cast<size_t>(t) * d + hoff;
                for (int j = 0; j <= t; ++j) {
                    const double ds = prow[j] * (dp[static_cast<size_t>(j)] - dsum) * inv_sqrt_hd;
                    if (ds == 0.0) continue;
                    const double* kj = lc.k.data() + static_cast<size_t>(j) * d + hoff;
                    double* dkj = dk.data() + static_cast<size_t>(j) * d + hoff;
                    for (int cdim = 0; cdim < hd; ++cdim) {
                        dqt[cdim] += ds * kj[cdim];
                        dkj[cdim] += ds * qt[cdim];
                    }
                }
            }
        }
        for (int t = 0; t < T; ++t) {
            const double* a = lc.a.data() + static_cast<size_t>(t) * d;
            const double* dq_t = dq.data() + static_cast<size_t>(t) * d;
            const double* dk_t = dk.data() + static_cast<size_t>(t) * d;
            const double* dv_t = dv.data() + static_cast<size_t>(t) * d;
            outer_acc(g + off.wq, dq_t, a, d, d);
            outer_acc(g + off.wk, dk_t, a, d, d);
            outer_acc(g + off.wv, dv_t, a, d, d);
            std::vector<double> da(static_cast<size_t>(d), 0.0);
            matvec_t_acc(m.at(off.wq), dq_t, d, d, da.data());
            matvec_t_acc(m.at(off.wk), dk_t, d, d, da.data());
            matvec_t_acc(m.at(off.wv), dv_t, d, d, da.data());
            // dxin = dxa (residual) + ln1 backward
            double* dxin_t = dx.data() + static_cast<size_t>(t) * d;
            std::copy(dxa.begin() + static_cast<size_t>(t) * d,
                      dxa.begin() + static_cast<size_t>(t) * d + d, dxin_t);
            rmsnorm_backward(lc.xin.data() + static_cast<size_t>(t) * d, m.at(off.g1),
                             lc.inv1[static_cast<size_t>(t)], d, da.data(), dxin_t, g + off.g1);
        }
    }

    // Embeddings.
    for (int t = 0; t < T; ++t) {
        const double* dx_t = dx.data() + static_cast<size_t>(t) * d;
        double* dte = g + m.lay.tok_emb + static_cast<int64_t>(c.toks[static_cast<size_t>(t)]) * d;
        double* dpe = g + m.lay.pos_emb + static_cast<int64_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            dte[i] += dx_t[i];
            dpe[i] += dx_t[i];
        }
    }
}

// Forward for one term; records caches when grad is wanted. Returns the
// response log-prob total and (optionally) per-token entries.
double run_term(const Model& m, const std::vector<int>& tokens, int prompt_len, bool want_grad,
                double coeff, std::vector<double>* grad, std::vector<double>* per_token) {
    const int T = static_cast<int>(tokens.size());
    if (prompt_len < 1 || prompt_len > T) throw DataError("prompt length out of range");
    if (T > m.arch.context_len) throw DataError("sequence exceeds context length");
    if (prompt_len == T) return 0.0;  // empty response
    SeqForward fwd(m, T, want_grad);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        fwd.push(tokens[static_cast<size_t>(t)]);
        if (t + 1 >= prompt_len && t + 1 < T + (want_grad ? 0 : 1) && t + 1 <= T - 1) {
            auto row = fwd.logprob_row();
            fwd.record_prob_row(t, row);
            double lp = row[static_cast<size_t>(tokens[static_cast<size_t>(t + 1)])];
            total += lp;
            if (per_token) per_token->push_back(lp);
        }
    }
    if (want_grad) {
        FwdCache cache = fwd.take_cache();
        backward_seq(m, cache, prompt_len, coeff, *grad);
    }
    return total;
}

void ensure_finite_params(const Checkpoint& c) {
    for (double v : c.params)
        if (!std::isfinite(v)) throw NumericError("checkpoint contains non-finite parameters");
}

}  // namespace

void ArchConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || context_len < 1 || vocab_size < 1)
        throw ConfigError("architecture dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

int64_t ArchConfig::param_count() const {
    return ParamLayout(*this).total;
}

const char* to_string(Stage s) {
    switch (s) {
        case Stage::base: return "base";
        case Stage::format1: return "format1";
        case Stage::direct2: return "direct2";
        case Stage::cot3: return "cot3";
        case Stage::sft4: return "sft4";
        case Stage::rft: return "rft";
        case Stage::dpo: return "dpo";
    }
    throw ConfigError("bad stage");
}

Stage stage_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(Stage::dpo); ++i) {
        auto st = static_cast<Stage>(i);
        if (s == to_string(st)) return st;
    }
    throw DataError("unknown stage tag: " + s);
}

Checkpoint init_checkpoint(const ArchConfig& arch_in, const Vocab& vocab, uint64_t seed, double init_std) {
    ArchConfig arch = arch_in;
    arch.vocab_size = vocab.size();
    arch.validate();
    ParamLayout lay(arch);
    Checkpoint c;
    c.arch = arch;
    c.vocab_hash = vocab.hash();
    c.seed_lineage = seed;
    c.stage = Stage::base;
    c.params.assign(static_cast<size_t>(lay.total), 0.0);
    Rng rng = Rng(seed).derive("init");
    auto fill = [&](int64_t off, int64_t n, double std) {
        for (int64_t i = 0; i < n; ++i) c.params[static_cast<size_t>(off + i)] = std * rng.gaussian();
    };
    auto ones = [&](int64_t off, int64_t n) {
        for (int64_t i = 0; i < n; ++i) c.params[static_cast<size_t>(off + i)] = 1.0;
    };
    const int64_t d = arch.d_model, ff = arch.d_ff, V = arch.vocab_size, C = arch.context_len;
    const double resid_std = init_std / std::sqrt(2.0 * arch.n_layers);
    fill(lay.tok_emb, V * d, init_std);
    fill(lay.pos_emb, C * d, init_std);
    for (const auto& L : lay.layers) {
        ones(L.g1, d);
        fill(L.wq, d * d, init_std);
        fill(L.wk, d * d, init_std);
        fill(L.wv, d * d, init_std);
        fill(L.wo, d * d, resid_std);
        ones(L.g2, d);
        fill(L.w1, ff * d, init_std);
        fill(L.w2, d * ff, resid_std);
    }
    ones(lay.gf, d);
    fill(lay.wout, V * d, init_std);
    return c;
}

std::vector<std::vector<double>> forward_logprobs(const Checkpoint& ckpt, const std::vector<int>& tokens) {
    Model m(ckpt);
    if (tokens.empty()) return {};
    if (static_cast<int>(tokens.size()) > ckpt.arch.context_len)
        throw DataError("sequence exceeds context length");
    SeqForward fwd(m, static_cast<int>(tokens.size()), false);
    std::vector<std::vector<double>> rows;
    rows.reserve(tokens.size());
    for (int tok : tokens) {
        fwd.push(tok);
        rows.push_back(fwd.logprob_row());
    }
    return rows;
}

LogProbTrace seq_logprob(const Checkpoint& ckpt, const std::vector<int>& prompt,
                         const std::vector<int>& response) {
    LogProbTrace trace;
    if (response.empty()) return trace;
    Model m(ckpt);
    std::vector<int> tokens = prompt;
    tokens.insert(tokens.end(), response.begin(), response.end());
    trace.per_token.reserve(response.size());
    trace.total = run_term(m, tokens, static_cast<int>(prompt.size()), false, 0.0, nullptr, &trace.per_token);
    return trace;
}

namespace {

SampleResult decode_impl(const Checkpoint& ckpt, const std::vector<int>& prompt, double temperature,
                         int max_len, uint64_t seed, bool greedy) {
    if (prompt.empty()) throw DataError("prompt must not be empty");
    Model m(ckpt);
    const int ctx = ckpt.arch.context_len;
    if (static_cast<int>(prompt.size()) >= ctx) throw DataError("prompt exceeds context length");
    int budget = std::min<int>(max_len, ctx - static_cast<int>(prompt.size()));
    SeqForward fwd(m, ctx, false);
    for (int tok : prompt) fwd.push(tok);
    Rng rng(seed);
    SampleResult out;
    const int V = ckpt.arch.vocab_size;
    const int eos = Vocab::world().eos_id();  // ids are world-vocab ids by construction
    for (int stepi = 0; stepi < budget; ++stepi) {
        std::vector<double> row = fwd.logprob_row();
        int chosen = 0;
        if (greedy) {
            for (int v = 1; v < V; ++v)
                if (row[static_cast<size_t>(v)] > row[static_cast<size_t>(chosen)]) chosen = v;
        } else {
            // Tempered categorical draw; the recorded trace entry stays the
            // untempered log-probability.
            double mx = row[0];
            for (int v = 1; v < V; ++v) mx = std::max(mx, row[static_cast<size_t>(v)]);
            std::vector<double> w(static_cast<size_t>(V));
            double z = 0.0;
            for (int v = 0; v < V; ++v) {
                w[static_cast<size_t>(v)] = std::exp((row[static_cast<size_t>(v)] - mx) / temperature);
                z += w[static_cast<size_t>(v)];
            }
            double u = rng.uniform01() * z;
            double cum = 0.0;
            chosen = V - 1;
            for (int v = 0; v < V; ++v) {
                cum += w[static_cast<size_t>(v)];
                if (u < cum) {
                    chosen = v;
                    break;
                }
            }
        }
        out.response.push_back(chosen);
        out.trace.per_token.push_back(row[static_cast<size_t>(chosen)]);
        out.trace.total += row[static_cast<size_t>(chosen)];
        if (chosen == eos) break;
        fwd.push(chosen);
    }
    return out;
}

}  // namespace

SampleResult sample(const Checkpoint& ckpt, const std::vector<int>& prompt, double temperature,
                    int max_len, uint64_t seed) {
    if (temperature <= 0.0) throw ConfigError("temperature must be positive (use greedy_decode)");
    if (max_len < 1) throw ConfigError("max_len must be at least 1");
    return decode_impl(ckpt, prompt, temperature, max_len, seed, false);
}

SampleResult greedy_decode(const Checkpoint& ckpt, const std::vector<int>& prompt, int max_len) {
    if (max_len < 1) throw ConfigError("max_len must be at least 1");
    return decode_impl(ckpt, prompt, 1.0, max_len, 0, true);
}

std::vector<double> weighted_logprob_grad(const Checkpoint& ckpt, const std::vector<SeqTerm>& terms,
                                          std::vector<double>& grad) {
    Model m(ckpt);
    grad.assign(static_cast<size_t>(m.lay.total), 0.0);
    std::vector<double> totals(terms.size(), 0.0);
    // Fixed-size chunks: parallel within a chunk (independent per-term grad
    // buffers), reduced in term order, so results are worker-count invariant.
    constexpr size_t kChunk = 16;
    std::vector<std::vector<double>> term_grads(std::min(kChunk, terms.size()));
    for (size_t c0 = 0; c0 < terms.size(); c0 += kChunk) {
        const size_t c1 = std::min(terms.size(), c0 + kChunk);
        parallel_for(c1 - c0, [&](size_t k) {
            const SeqTerm& term = terms[c0 + k];
            auto& tg = term_grads[k];
            tg.assign(static_cast<size_t>(m.lay.total), 0.0);
            totals[c0 + k] = run_term(m, *term.tokens, term.prompt_len, true, term.coeff, &tg, nullptr);
        });
        for (size_t k = 0; k < c1 - c0; ++k) {
            const auto& tg = term_grads[k];
            for (size_t i = 0; i < grad.size(); ++i) grad[i] += tg[i];
        }
    }
    return totals;
}

std::pair<double, std::vector<double>> nll_loss_and_grad(const Checkpoint& ckpt,
                                                         const std::vector<SeqExample>& batch) {
    if (batch.empty()) throw ConfigError("nll_loss_and_grad: empty batch");
    int64_t n_resp = 0;
    for (const auto& ex : batch) {
        if (ex.prompt_len < 1 || ex.prompt_len > static_cast<int>(ex.tokens.size()))
            throw DataError("bad prompt length in batch");
        n_resp += static_cast<int>(ex.tokens.size()) - ex.prompt_len;
    }
    if (n_resp == 0) throw DataError("degenerate batch: no response tokens");
    const double coeff = -1.0 / static_cast<double>(n_resp);
    std::vector<SeqTerm> terms;
    terms.reserve(batch.size());
    for (const auto& ex : batch) terms.push_back({&ex.tokens, ex.prompt_len, coeff});
    std::vector<double> grad;
    auto totals = weighted_logprob_grad(ckpt, terms, grad);
    double total_lp = 0.0;
    for (double t : totals) total_lp += t;
    double loss = -total_lp / static_cast<double>(n_resp);
    if (!std::isfinite(loss)) throw NumericError("non-finite NLL loss");
    return {loss, std::move(grad)};
}

namespace {

constexpr char kMagic[8] = {'C', 'O', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("checkpoint file truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ensure_finite_params(ckpt);
    std::string buf;
    buf.reserve(ckpt.params.size() * sizeof(double) + 128);
    buf.append(kMagic, sizeof(kMagic));
    put(buf, kVersion);
    put(buf, static_cast<uint8_t>(ckpt.stage));
    put(buf, ckpt.vocab_hash);
    put(buf, ckpt.seed_lineage);
    put(buf, static_cast<uint32_t>(ckpt.arch.n_layers));
    put(buf, static_cast<uint32_t>(ckpt.arch.d_model));
    put(buf, static_cast<uint32_t>(ckpt.arch.n_heads));
    put(buf, static_cast<uint32_t>(ckpt.arch.d_ff));
    put(buf, static_cast<uint32_t>(ckpt.arch.context_len));
    put(buf, static_cast<uint32_t>(ckpt.arch.vocab_size));
    put(buf, static_cast<uint64_t>(ckpt.params.size()));
    buf.append(reinterpret_cast<const char*>(ckpt.params.data()), ckpt.params.size() * sizeof(double));
    uint64_t checksum = fnv1a64(buf.data(), buf.size());
    put(buf, checksum);
    write_text_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string buf = read_text_file(path);
    if (buf.size() < sizeof(kMagic) + sizeof(uint64_t)) throw DataError("checkpoint file truncated: " + path);
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("bad checkpoint magic: " + path);
    uint64_t stored_checksum;
    std::memcpy(&stored_checksum, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
    uint64_t computed = fnv1a64(buf.data(), buf.size() - sizeof(uint64_t));
    if (stored_checksum != computed) throw DataError("checkpoint checksum mismatch: " + path);
    size_t off = sizeof(kMagic);
    uint32_t version = take<uint32_t>(buf, off);
    if (version != kVersion) throw DataError("unsupported checkpoint version");
    Checkpoint c;
    c.stage = static_cast<Stage>(take<uint8_t>(buf, off));
    c.vocab_hash = take<uint64_t>(buf, off);
    c.seed_lineage = take<uint64_t>(buf, off);
    c.arch.n_layers = static_cast<int>(take<uint32_t>(buf, off));
    c.arch.d_model = static_cast<int>(take<uint32_t>(buf, off));
    c.arch.n_heads = static_cast<int>(take<uint32_t>(buf, off));
    c.arch.d_ff = static_cast<int>(take<uint32_t>(buf, off));
    c.arch.context_len = static_cast<int>(take<uint32_t>(buf, off));
    c.arch.vocab_size = static_cast<int>(take<uint32_t>(buf, off));
    uint64_t n_params = take<uint64_t>(buf, off);
    c.arch.validate();
    if (n_params != static_cast<uint64_t>(c.arch.param_count()))
        throw DataError("checkpoint parameter count does not match architecture");
    if (off + n_params * sizeof(double) + sizeof(uint64_t) != buf.size())
        throw DataError("checkpoint file truncated: " + path);
    c.params.resize(n_params);
    std::memcpy(c.params.data(), buf.data() + off, n_params * sizeof(double));
    ensure_finite_params(c);
    return c;
}

uint64_t checkpoint_digest(const Checkpoint& ckpt) {
    uint64_t h = kFnvOffset;
    auto mix = [&](const void* p, size_t n) { h = fnv1a64(p, n, h); };
    int32_t dims[6] = {ckpt.arch.n_layers, ckpt.arch.d_model,     ckpt.arch.n_heads,
                       ckpt.arch.d_ff,     ckpt.arch.context_len, ckpt.arch.vocab_size};
    mix(dims, sizeof(dims));
    auto stage = static_cast<uint8_t>(ckpt.stage);
    mix(&stage, 1);
    mix(&ckpt.vocab_hash, sizeof(ckpt.vocab_hash));
    mix(&ckpt.seed_lineage, sizeof(ckpt.seed_lineage));
    mix(ckpt.params.data(), ckpt.params.size() * sizeof(double));
    return h;
}

void require_vocab(const Checkpoint& ckpt, const Vocab& vocab) {
    if (ckpt.vocab_hash != vocab.hash())
        throw DataError("vocab hash mismatch: checkpoint " + hex64(ckpt.vocab_hash) + " vs vocab " +
                        hex64(vocab.hash()));
}

}  // namespace cotlab
