#include "iclids/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace iclids {

namespace {

constexpr double kLnEps = 1e-5;

struct BlockOffsets {
    size_t ln1_g, ln1_b;
    size_t wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b;
    size_t w1, b1, w2, b2;
};

struct Offsets {
    size_t wxe, bxe, wye, bye, wpos;
    std::vector<BlockOffsets> block;
    size_t lnf_g, lnf_b, wro, bro;
    size_t total;
};

Offsets compute_offsets(const ModelConfig& c) {
    const size_t E = static_cast<size_t>(c.embed_dim);
    const size_t H = 4 * E;  // feed-forward width
    Offsets o{};
    size_t cur = 0;
    auto take = [&cur](size_t n) {
        const size_t at = cur;
        cur += n;
        return at;
    };
    o.wxe = take(E * static_cast<size_t>(c.feature_dim));
    o.bxe = take(E);
    o.wye = take(E * static_cast<size_t>(c.y_input_dim()));
    o.bye = take(E);
    o.wpos = take(static_cast<size_t>(c.max_tokens()) * E);
    o.block.resize(static_cast<size_t>(c.layers));
    for (auto& b : o.block) {
        b.ln1_g = take(E);
        b.ln1_b = take(E);
        b.wq = take(E * E);
        b.bq = take(E);
        b.wk = take(E * E);
        b.bk = take(E);
        b.wv = take(E * E);
        b.bv = take(E);
        b.wo = take(E * E);
        b.bo = take(E);
        b.ln2_g = take(E);
        b.ln2_b = take(E);
        b.w1 = take(H * E);
        b.b1 = take(H);
        b.w2 = take(E * H);
        b.b2 = take(E);
    }
    o.lnf_g = take(E);
    o.lnf_b = take(E);
    o.wro = take(static_cast<size_t>(c.num_classes) * E);
    o.bro = take(static_cast<size_t>(c.num_classes));
    o.total = cur;
    return o;
}

std::vector<TensorSpec> build_layout(const ModelConfig& c) {
    const auto o = compute_offsets(c);
    const uint32_t E = static_cast<uint32_t>(c.embed_dim);
    const uint32_t H = 4 * E;
    std::vector<TensorSpec> layout;
    auto add = [&layout](const std::string& name, size_t offset, std::vector<uint32_t> shape) {
        layout.push_back(TensorSpec{name, offset, std::move(shape)});
    };
    add("wxe", o.wxe, {E, static_cast<uint32_t>(c.feature_dim)});
    add("bxe", o.bxe, {E});
    add("wye", o.wye, {E, static_cast<uint32_t>(c.y_input_dim())});
    add("bye", o.bye, {E});
    add("wpos", o.wpos, {static_cast<uint32_t>(c.max_tokens()), E});
    for (int l = 0; l < c.layers; ++l) {
        const auto& b = o.block[static_cast<size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        add(p + "ln1_g", b.ln1_g, {E});
        add(p + "ln1_b", b.ln1_b, {E});
        add(p + "wq", b.wq, {E, E});
        add(p + "bq", b.bq, {E});
        add(p + "wk", b.wk, {E, E});
        add(p + "bk", b.bk, {E});
        add(p + "wv", b.wv, {E, E});
        add(p + "bv", b.bv, {E});
        add(p + "wo", b.wo, {E, E});
        add(p + "bo", b.bo, {E});
        add(p + "ln2_g", b.ln2_g, {E});
        add(p + "ln2_b", b.ln2_b, {E});
        add(p + "w1", b.w1, {H, E});
        add(p + "b1", b.b1, {H});
        add(p + "w2", b.w2, {E, H});
        add(p + "b2", b.b2, {E});
    }
    add("lnf_g", o.lnf_g, {E});
    add("lnf_b", o.lnf_b, {E});
    add("wro", o.wro, {static_cast<uint32_t>(c.num_classes), E});
    add("bro", o.bro, {static_cast<uint32_t>(c.num_classes)});
    return layout;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// y = W x + b, W row-major [out, in]
inline void linear(const double* w, const double* b, const double* x, double* y, int out,
                   int in) {
    for (int i = 0; i < out; ++i) {
        double acc = b ? b[i] : 0.0;
        const double* row = w + static_cast<size_t>(i) * in;
        for (int j = 0; j < in; ++j) {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
}

// dW += dy outer x ; db += dy ; dx += W^T dy
inline void linear_backward(const double* w, const double* x, const double* dy, double* dw,
                            double* db, double* dx, int out, int in) {
    for (int i = 0; i < out; ++i) {
        const double dyi = dy[i];
        const double* row = w + static_cast<size_t>(i) * in;
        double* drow = dw + static_cast<size_t>(i) * in;
        for (int j = 0; j < in; ++j) {
            drow[j] += dyi * x[j];
            if (dx) {
                dx[j] += row[j] * dyi;
            }
        }
        if (db) {
            db[i] += dyi;
        }
    }
}

inline void layernorm(const double* h, const double* g, const double* b, double* out,
                      double* xhat, double* rstd_out, int E) {
    double mean = 0.0;
    for (int e = 0; e < E; ++e) {
        mean += h[e];
    }
    mean /= E;
    double var = 0.0;
    for (int e = 0; e < E; ++e) {
        const double dx = h[e] - mean;
        var += dx * dx;
    }
    var /= E;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int e = 0; e < E; ++e) {
        const double u = (h[e] - mean) * rstd;
        xhat[e] = u;
        out[e] = g[e] * u + b[e];
    }
    *rstd_out = rstd;
}

// dh += backward of layernorm; accumulates dg/db.
inline void layernorm_backward(const double* dout, const double* xhat, double rstd,
                               const double* g, double* dh, double* dg, double* db, int E) {
    double sum_du = 0.0;
    double sum_du_xhat = 0.0;
    for (int e = 0; e < E; ++e) {
        const double du = dout[e] * g[e];
        sum_du += du;
        sum_du_xhat += du * xhat[e];
        dg[e] += dout[e] * xhat[e];
        db[e] += dout[e];
    }
    const double inv_e = 1.0 / E;
    for (int e = 0; e < E; ++e) {
        const double du = dout[e] * g[e];
        dh[e] += rstd * (du - inv_e * sum_du - xhat[e] * inv_e * sum_du_xhat);
    }
}

// Per-sequence activation cache.
struct Workspace {
    int T{0}, M{0};
    std::vector<double> emb;  // layer-0 input stream [T,E]
    struct Layer {
        std::vector<double> h_in;    // [T,E]
        std::vector<double> xhat1;   // [T,E]
        std::vector<double> rstd1;   // [T]
        std::vector<double> u1;      // [T,E]
        std::vector<double> q, k, v; // [T,E]
        std::vector<double> att;     // [heads,T,T]
        std::vector<double> ctx;     // [T,E]
        std::vector<double> h_mid;   // [T,E]
        std::vector<double> xhat2;   // [T,E]
        std::vector<double> rstd2;   // [T]
        std::vector<double> u2;      // [T,E]
        std::vector<double> z1;      // [T,4E]
        std::vector<double> g1;      // [T,4E]
    };
    std::vector<Layer> layers;
    std::vector<double> h_last;  // [T,E]
    std::vector<double> xhatf;   // [T,E]
    std::vector<double> rstdf;   // [T]
    std::vector<double> fin;     // [T,E]
    std::vector<double> logits;  // [M,K]

    void resize(const ModelConfig& c, int pairs) {
        M = pairs;
        T = 2 * pairs;
        const size_t TE = static_cast<size_t>(T) * c.embed_dim;
        const size_t TH = static_cast<size_t>(T) * 4 * c.embed_dim;
        emb.assign(TE, 0.0);
        layers.resize(static_cast<size_t>(c.layers));
        for (auto& L : layers) {
            L.h_in.assign(TE, 0.0);
            L.xhat1.assign(TE, 0.0);
            L.rstd1.assign(static_cast<size_t>(T), 0.0);
            L.u1.assign(TE, 0.0);
            L.q.assign(TE, 0.0);
            L.k.assign(TE, 0.0);
            L.v.assign(TE, 0.0);
            L.att.assign(static_cast<size_t>(c.heads) * T * T, 0.0);
            L.ctx.assign(TE, 0.0);
            L.h_mid.assign(TE, 0.0);
            L.xhat2.assign(TE, 0.0);
            L.rstd2.assign(static_cast<size_t>(T), 0.0);
            L.u2.assign(TE, 0.0);
            L.z1.assign(TH, 0.0);
            L.g1.assign(TH, 0.0);
        }
        h_last.assign(TE, 0.0);
        xhatf.assign(TE, 0.0);
        rstdf.assign(static_cast<size_t>(T), 0.0);
        fin.assign(TE, 0.0);
        logits.assign(static_cast<size_t>(M) * c.num_classes, 0.0);
    }
};

void check_sequence(const ModelConfig& c, const ContextSequence& seq) {
    require(seq.mode == c.mode, Errc::ModeMismatch, "sequence mode differs from model mode");
    const int M = static_cast<int>(seq.pairs.size());
    require(M >= 1, Errc::InvalidConfig, "empty sequence");
    require(M <= c.context_pairs, Errc::LengthExceeded,
            "sequence has " + std::to_string(M) + " pairs, model supports " +
                std::to_string(c.context_pairs));
    for (const auto& p : seq.pairs) {
        require(static_cast<int>(p.x.size()) == c.feature_dim, Errc::DimensionMismatch,
                "x token length mismatch");
        require(static_cast<int>(p.y_ctx.size()) == c.y_input_dim(), Errc::DimensionMismatch,
                "y token length mismatch");
    }
}

}  // namespace

void ModelConfig::validate() const {
    require(layers >= 1, Errc::InvalidConfig, "layers must be >= 1");
    require(heads >= 1, Errc::InvalidConfig, "heads must be >= 1");
    require(embed_dim >= heads, Errc::InvalidConfig, "embed_dim must be >= heads");
    require(embed_dim % heads == 0, Errc::InvalidConfig, "embed_dim must be divisible by heads");
    require(context_pairs >= 2, Errc::InvalidConfig, "context_pairs must be >= 2");
    require(num_classes >= 2, Errc::InvalidConfig, "num_classes must be >= 2");
    require(feature_dim >= 1, Errc::InvalidConfig, "feature_dim must be >= 1");
    if (mode == SequenceMode::DTF) {
        require(weak_count >= 1, Errc::InvalidConfig, "weak_count must be >= 1 in DTF mode");
    }
}

Model::Model(const ModelConfig& config) : config_(config) {
    layout_ = build_layout(config);
    const auto o = compute_offsets(config);
    params_.assign(o.total, 0.0);
}

Model Model::init(const ModelConfig& config) {
    config.validate();
    Model m(config);
    Rng rng(Rng::mix(config.seed, 0x1c17ULL));
    constexpr double kInitStd = 0.02;
    // Weight matrices and positional table get small gaussian init; biases
    // stay zero and layer-norm gains start at one.
    for (const auto& t : m.layout_) {
        const bool is_gain = t.name.find("_g") != std::string::npos && t.shape.size() == 1;
        const bool is_bias = !is_gain && t.shape.size() == 1;
        double* p = m.params_.data() + t.offset;
        if (is_gain) {
            std::fill(p, p + t.count(), 1.0);
        } else if (is_bias) {
            std::fill(p, p + t.count(), 0.0);
        } else {
            for (size_t i = 0; i < t.count(); ++i) {
                p[i] = rng.gaussian(0.0, kInitStd);
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

void forward_internal(const ModelConfig& c, const std::vector<double>& params,
                      const ContextSequence& seq, Workspace& ws) {
    const int M = static_cast<int>(seq.pairs.size());
    const int T = 2 * M;
    const int E = c.embed_dim;
    const int FF = 4 * E;
    const int heads = c.heads;
    const int hd = E / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto o = compute_offsets(c);
    const double* P = params.data();

    ws.resize(c, M);

    // Token embeddings + positions.
    for (int n = 0; n < M; ++n) {
        const auto& pair = seq.pairs[static_cast<size_t>(n)];
        double* ex = ws.emb.data() + static_cast<size_t>(2 * n) * E;
        double* ey = ws.emb.data() + static_cast<size_t>(2 * n + 1) * E;
        linear(P + o.wxe, P + o.bxe, pair.x.data(), ex, E, c.feature_dim);
        linear(P + o.wye, P + o.bye, pair.y_ctx.data(), ey, E, c.y_input_dim());
        for (int e = 0; e < E; ++e) {
            ex[e] += P[o.wpos + static_cast<size_t>(2 * n) * E + e];
            ey[e] += P[o.wpos + static_cast<size_t>(2 * n + 1) * E + e];
        }
    }

    std::vector<double> stream = ws.emb;
    for (int l = 0; l < c.layers; ++l) {
        auto& L = ws.layers[static_cast<size_t>(l)];
        const auto& B = o.block[static_cast<size_t>(l)];
        L.h_in = stream;

        for (int t = 0; t < T; ++t) {
            layernorm(L.h_in.data() + static_cast<size_t>(t) * E, P + B.ln1_g, P + B.ln1_b,
                      L.u1.data() + static_cast<size_t>(t) * E,
                      L.xhat1.data() + static_cast<size_t>(t) * E,
                      &L.rstd1[static_cast<size_t>(t)], E);
            linear(P + B.wq, P + B.bq, L.u1.data() + static_cast<size_t>(t) * E,
                   L.q.data() + static_cast<size_t>(t) * E, E, E);
            linear(P + B.wk, P + B.bk, L.u1.data() + static_cast<size_t>(t) * E,
                   L.k.data() + static_cast<size_t>(t) * E, E, E);
            linear(P + B.wv, P + B.bv, L.u1.data() + static_cast<size_t>(t) * E,
                   L.v.data() + static_cast<size_t>(t) * E, E, E);
        }

        // Causal attention per head.
        for (int h = 0; h < heads; ++h) {
            const int off = h * hd;
            for (int t = 0; t < T; ++t) {
                double* arow = L.att.data() + (static_cast<size_t>(h) * T + t) * T;
                const double* qt = L.q.data() + static_cast<size_t>(t) * E + off;
                double mx = -1e300;
                for (int j = 0; j <= t; ++j) {
                    const double* kj = L.k.data() + static_cast<size_t>(j) * E + off;
                    double s = 0.0;
                    for (int e = 0; e < hd; ++e) {
                        s += qt[e] * kj[e];
                    }
                    s *= scale;
                    arow[j] = s;
                    mx = std::max(mx, s);
                }
                double sum = 0.0;
                for (int j = 0; j <= t; ++j) {
                    arow[j] = std::exp(arow[j] - mx);
                    sum += arow[j];
                }
                const double inv = 1.0 / sum;
                for (int j = 0; j <= t; ++j) {
                    arow[j] *= inv;
                }
                double* ct = L.ctx.data() + static_cast<size_t>(t) * E + off;
                for (int e = 0; e < hd; ++e) {
                    ct[e] = 0.0;
                }
                for (int j = 0; j <= t; ++j) {
                    const double a = arow[j];
                    const double* vj = L.v.data() + static_cast<size_t>(j) * E + off;
                    for (int e = 0; e < hd; ++e) {
                        ct[e] += a * vj[e];
                    }
                }
            }
        }

        // Output projection + residual, then the feed-forward sublayer.
        for (int t = 0; t < T; ++t) {
            double* hm = L.h_mid.data() + static_cast<size_t>(t) * E;
            std::vector<double> proj(static_cast<size_t>(E));
            linear(P + B.wo, P + B.bo, L.ctx.data() + static_cast<size_t>(t) * E, proj.data(), E,
                   E);
            const double* hi = L.h_in.data() + static_cast<size_t>(t) * E;
            for (int e = 0; e < E; ++e) {
                hm[e] = hi[e] + proj[e];
            }

            layernorm(hm, P + B.ln2_g, P + B.ln2_b, L.u2.data() + static_cast<size_t>(t) * E,
                      L.xhat2.data() + static_cast<size_t>(t) * E,
                      &L.rstd2[static_cast<size_t>(t)], E);
            double* z1 = L.z1.data() + static_cast<size_t>(t) * FF;
            linear(P + B.w1, P + B.b1, L.u2.data() + static_cast<size_t>(t) * E, z1, FF, E);
            double* g1 = L.g1.data() + static_cast<size_t>(t) * FF;
            for (int i = 0; i < FF; ++i) {
                g1[i] = gelu(z1[i]);
            }
            std::vector<double> ff(static_cast<size_t>(E));
            linear(P + B.w2, P + B.b2, g1, ff.data(), E, FF);
            double* out = stream.data() + static_cast<size_t>(t) * E;
            for (int e = 0; e < E; ++e) {
                out[e] = hm[e] + ff[e];
            }
        }
    }

    ws.h_last = stream;
    for (int t = 0; t < T; ++t) {
        layernorm(ws.h_last.data() + static_cast<size_t>(t) * E, P + o.lnf_g, P + o.lnf_b,
                  ws.fin.data() + static_cast<size_t>(t) * E,
                  ws.xhatf.data() + static_cast<size_t>(t) * E, &ws.rstdf[static_cast<size_t>(t)],
                  E);
    }
    // Readout at y-token positions.
    for (int n = 0; n < M; ++n) {
        linear(P + o.wro, P + o.bro, ws.fin.data() + static_cast<size_t>(2 * n + 1) * E,
               ws.logits.data() + static_cast<size_t>(n) * c.num_classes, c.num_classes, E);
    }
}

void backward_internal(const ModelConfig& c, const std::vector<double>& params,
                       const ContextSequence& seq, const Workspace& ws,
                       const std::vector<double>& dlogits, std::vector<double>& grads) {
    const int M = ws.M;
    const int T = ws.T;
    const int E = c.embed_dim;
    const int FF = 4 * E;
    const int heads = c.heads;
    const int hd = E / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto o = compute_offsets(c);
    const double* P = params.data();
    double* G = grads.data();

    const size_t TE = static_cast<size_t>(T) * E;
    std::vector<double> dfin(TE, 0.0);
    for (int n = 0; n < M; ++n) {
        linear_backward(P + o.wro, ws.fin.data() + static_cast<size_t>(2 * n + 1) * E,
                        dlogits.data() + static_cast<size_t>(n) * c.num_classes, G + o.wro,
                        G + o.bro, dfin.data() + static_cast<size_t>(2 * n + 1) * E,
                        c.num_classes, E);
    }

    std::vector<double> dstream(TE, 0.0);
    for (int t = 0; t < T; ++t) {
        layernorm_backward(dfin.data() + static_cast<size_t>(t) * E,
                           ws.xhatf.data() + static_cast<size_t>(t) * E,
                           ws.rstdf[static_cast<size_t>(t)], P + o.lnf_g,
                           dstream.data() + static_cast<size_t>(t) * E, G + o.lnf_g, G + o.lnf_b,
                           E);
    }

    std::vector<double> dh_mid(TE);
    std::vector<double> du2(TE);
    std::vector<double> dz1(static_cast<size_t>(T) * FF);
    std::vector<double> dctx(TE);
    std::vector<double> dq(TE), dk(TE), dv(TE), du1(TE), dh_in(TE);

    for (int l = c.layers - 1; l >= 0; --l) {
        const auto& L = ws.layers[static_cast<size_t>(l)];
        const auto& B = o.block[static_cast<size_t>(l)];

        std::fill(dh_mid.begin(), dh_mid.end(), 0.0);
        std::fill(du2.begin(), du2.end(), 0.0);
        std::fill(dz1.begin(), dz1.end(), 0.0);

        // Feed-forward sublayer backward: h_out = h_mid + W2 gelu(W1 u2 + b1) + b2.
        for (int t = 0; t < T; ++t) {
            const double* dout = dstream.data() + static_cast<size_t>(t) * E;
            double* dm = dh_mid.data() + static_cast<size_t>(t) * E;
            for (int e = 0; e < E; ++e) {
                dm[e] += dout[e];  // skip connection
            }
            std::vector<double> dg1(static_cast<size_t>(FF), 0.0);
            linear_backward(P + B.w2, L.g1.data() + static_cast<size_t>(t) * FF, dout, G + B.w2,
                            G + B.b2, dg1.data(), E, FF);
            double* dz = dz1.data() + static_cast<size_t>(t) * FF;
            const double* z1 = L.z1.data() + static_cast<size_t>(t) * FF;
            for (int i = 0; i < FF; ++i) {
                dz[i] = dg1[static_cast<size_t>(i)] * gelu_grad(z1[i]);
            }
            linear_backward(P + B.w1, L.u2.data() + static_cast<size_t>(t) * E, dz, G + B.w1,
                            G + B.b1, du2.data() + static_cast<size_t>(t) * E, FF, E);
            layernorm_backward(du2.data() + static_cast<size_t>(t) * E,
                               L.xhat2.data() + static_cast<size_t>(t) * E,
                               L.rstd2[static_cast<size_t>(t)], P + B.ln2_g, dm, G + B.ln2_g,
                               G + B.ln2_b, E);
        }

        // Attention sublayer backward: h_mid = h_in + Wo ctx + bo.
        std::fill(dctx.begin(), dctx.end(), 0.0);
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        std::fill(du1.begin(), du1.end(), 0.0);
        std::fill(dh_in.begin(), dh_in.end(), 0.0);

        for (int t = 0; t < T; ++t) {
            const double* dm = dh_mid.data() + static_cast<size_t>(t) * E;
            double* dhi = dh_in.data() + static_cast<size_t>(t) * E;
            for (int e = 0; e < E; ++e) {
                dhi[e] += dm[e];  // skip connection
            }
            linear_backward(P + B.wo, L.ctx.data() + static_cast<size_t>(t) * E, dm, G + B.wo,
                            G + B.bo, dctx.data() + static_cast<size_t>(t) * E, E, E);
        }

        for (int h = 0; h < heads; ++h) {
            const int off = h * hd;
            std::vector<double> da(static_cast<size_t>(T), 0.0);
            for (int t = 0; t < T; ++t) {
                const double* arow = L.att.data() + (static_cast<size_t>(h) * T + t) * T;
                const double* dct = dctx.data() + static_cast<size_t>(t) * E + off;
                // dA and dV.
                double dot = 0.0;
                for (int j = 0; j <= t; ++j) {
                    const double* vj = L.v.data() + static_cast<size_t>(j) * E + off;
                    double s = 0.0;
                    for (int e = 0; e < hd; ++e) {
                        s += dct[e] * vj[e];
                    }
                    da[static_cast<size_t>(j)] = s;
                    dot += arow[j] * s;
                    double* dvj = dv.data() + static_cast<size_t>(j) * E + off;
                    const double a = arow[j];
                    for (int e = 0; e < hd; ++e) {
                        dvj[e] += a * dct[e];
                    }
                }
                // Softmax backward, then scores into q/k.
                const double* qt = L.q.data() + static_cast<size_t>(t) * E + off;
                double* dqt = dq.data() + static_cast<size_t>(t) * E + off;
                for (int j = 0; j <= t; ++j) {
                    const double ds = arow[j] * (da[static_cast<size_t>(j)] - dot) * scale;
                    const double* kj = L.k.data() + static_cast<size_t>(j) * E + off;
                    double* dkj = dk.data() + static_cast<size_t>(j) * E + off;
                    for (int e = 0; e < hd; ++e) {
                        dqt[e] += ds * kj[e];
                        dkj[e] += ds * qt[e];
                    }
                }
            }
        }

        for (int t = 0; t < T; ++t) {
            const size_t te = static_cast<size_t>(t) * E;
            linear_backward(P + B.wq, L.u1.data() + te, dq.data() + te, G + B.wq, G + B.bq,
                            du1.data() + te, E, E);
            linear_backward(P + B.wk, L.u1.data() + te, dk.data() + te, G + B.wk, G + B.bk,
                            du1.data() + te, E, E);
            linear_backward(P + B.wv, L.u1.data() + te, dv.data() + te, G + B.wv, G + B.bv,
                            du1.data() + te, E, E);
            layernorm_backward(du1.data() + te, L.xhat1.data() + te,
                               L.rstd1[static_cast<size_t>(t)], P + B.ln1_g,
                               dh_in.data() + te, G + B.ln1_g, G + B.ln1_b, E);
        }
        dstream = dh_in;
    }

    // Embedding backward.
    for (int n = 0; n < M; ++n) {
        const auto& pair = seq.pairs[static_cast<size_t>(n)];
        const double* dex = dstream.data() + static_cast<size_t>(2 * n) * E;
        const double* dey = dstream.data() + static_cast<size_t>(2 * n + 1) * E;
        linear_backward(P + o.wxe, pair.x.data(), dex, G + o.wxe, G + o.bxe, nullptr, E,
                        c.feature_dim);
        linear_backward(P + o.wye, pair.y_ctx.data(), dey, G + o.wye, G + o.bye, nullptr, E,
                        c.y_input_dim());
        for (int e = 0; e < E; ++e) {
            G[o.wpos + static_cast<size_t>(2 * n) * E + e] += dex[e];
            G[o.wpos + static_cast<size_t>(2 * n + 1) * E + e] += dey[e];
        }
    }
}

}  // namespace

std::vector<double> Model::forward(const ContextSequence& seq) const {
    check_sequence(config_, seq);
    Workspace ws;
    forward_internal(config_, params_, seq, ws);
    return ws.logits;
}

Model::QueryPrediction Model::predict_query(const ContextSequence& seq) const {
    const std::vector<double> logits = forward(seq);
    const int K = config_.num_classes;
    const int M = static_cast<int>(seq.pairs.size());
    QueryPrediction out;
    out.distribution.assign(static_cast<size_t>(K), 0.0);
    const double* row = logits.data() + static_cast<size_t>(M - 1) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) {
        mx = std::max(mx, row[k]);
    }
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
        out.distribution[static_cast<size_t>(k)] = std::exp(row[k] - mx);
        sum += out.distribution[static_cast<size_t>(k)];
    }
    int best = 0;
    for (int k = 0; k < K; ++k) {
        out.distribution[static_cast<size_t>(k)] /= sum;
        if (out.distribution[static_cast<size_t>(k)] > out.distribution[static_cast<size_t>(best)]) {
            best = k;
        }
    }
    out.predicted_class = best;
    out.attack = best != 0;
    return out;
}

double Model::sequence_loss(const std::vector<double>& logits, int num_classes,
                            const std::vector<int>& targets) {
    require(logits.size() == targets.size() * static_cast<size_t>(num_classes),
            Errc::ShapeMismatch, "logits/targets shape mismatch");
    double loss = 0.0;
    for (size_t n = 0; n < targets.size(); ++n) {
        const double* row = logits.data() + n * static_cast<size_t>(num_classes);
        const int y = targets[n];
        require(y >= 0 && y < num_classes, Errc::ShapeMismatch, "target class out of range");
        double mx = row[0];
        for (int k = 1; k < num_classes; ++k) {
            mx = std::max(mx, row[k]);
        }
        double sum = 0.0;
        for (int k = 0; k < num_classes; ++k) {
            sum += std::exp(row[k] - mx);
        }
        loss += std::log(sum) + mx - row[y];
    }
    return loss;
}

double Model::loss_and_gradient(const std::vector<ContextSequence>& batch,
                                std::vector<double>& grads) const {
    require(!batch.empty(), Errc::InvalidConfig, "empty batch");
    grads.assign(params_.size(), 0.0);
    const int K = config_.num_classes;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total_loss = 0.0;
    Workspace ws;
    for (const ContextSequence& seq : batch) {
        check_sequence(config_, seq);
        forward_internal(config_, params_, seq, ws);
        const int M = ws.M;
        std::vector<int> targets(static_cast<size_t>(M));
        for (int n = 0; n < M; ++n) {
            targets[static_cast<size_t>(n)] = seq.pairs[static_cast<size_t>(n)].y_true;
        }
        total_loss += sequence_loss(ws.logits, K, targets);

        std::vector<double> dlogits(static_cast<size_t>(M) * K, 0.0);
        for (int n = 0; n < M; ++n) {
            const double* row = ws.logits.data() + static_cast<size_t>(n) * K;
            double* drow = dlogits.data() + static_cast<size_t>(n) * K;
            double mx = row[0];
            for (int k = 1; k < K; ++k) {
                mx = std::max(mx, row[k]);
            }
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                drow[k] = std::exp(row[k] - mx);
                sum += drow[k];
            }
            for (int k = 0; k < K; ++k) {
                drow[k] = drow[k] / sum * inv_batch;
            }
            drow[targets[static_cast<size_t>(n)]] -= inv_batch;
        }
        backward_internal(config_, params_, seq, ws, dlogits, grads);
    }
    return total_loss * inv_batch;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double TrainRecord::smoothed_head(double fraction) const {
    const size_t n = std::max<size_t>(1, static_cast<size_t>(fraction * entries.size()));
    double sum = 0.0;
    for (size_t i = 0; i < n && i < entries.size(); ++i) {
        sum += entries[i].loss;
    }
    return sum / static_cast<double>(std::min(n, entries.size()));
}

double TrainRecord::smoothed_tail(double fraction) const {
    const size_t n = std::max<size_t>(1, static_cast<size_t>(fraction * entries.size()));
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = entries.size() >= n ? entries.size() - n : 0; i < entries.size(); ++i) {
        sum += entries[i].loss;
        ++count;
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

TrainRecord train(Model& model, const SequenceStream& stream, const TrainConfig& cfg) {
    require(cfg.iterations >= 0, Errc::InvalidConfig, "iterations must be >= 0");
    require(cfg.batch >= 1, Errc::InvalidConfig, "batch must be >= 1");

    TrainRecord record;
    if (cfg.iterations == 0) {
        return record;
    }

    std::vector<double> m(model.param_count(), 0.0);
    std::vector<double> v(model.param_count(), 0.0);
    std::vector<double> grads;
    std::vector<double> snapshot = model.params();  // last good checkpoint

    const auto t0 = std::chrono::steady_clock::now();
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        std::vector<ContextSequence> batch;
        batch.reserve(static_cast<size_t>(cfg.batch));
        for (int i = 0; i < cfg.batch; ++i) {
            batch.push_back(stream(iter, i));
        }
        const double loss = model.loss_and_gradient(batch, grads);
        if (!std::isfinite(loss)) {
            model.params() = snapshot;
            fail(Errc::NonFiniteLoss,
                 "loss became non-finite at iteration " + std::to_string(iter) +
                     "; model rolled back to the last checkpoint");
        }

        if (cfg.optimizer.clip_norm > 0.0) {
            double norm2 = 0.0;
            for (const double g : grads) {
                norm2 += g * g;
            }
            const double norm = std::sqrt(norm2);
            if (norm > cfg.optimizer.clip_norm) {
                const double s = cfg.optimizer.clip_norm / norm;
                for (double& g : grads) {
                    g *= s;
                }
            }
        }

        const double b1t = 1.0 - std::pow(cfg.optimizer.beta1, iter);
        const double b2t = 1.0 - std::pow(cfg.optimizer.beta2, iter);
        auto& params = model.params();
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.optimizer.beta1 * m[i] + (1.0 - cfg.optimizer.beta1) * grads[i];
            v[i] = cfg.optimizer.beta2 * v[i] + (1.0 - cfg.optimizer.beta2) * grads[i] * grads[i];
            params[i] -= cfg.optimizer.learning_rate * (m[i] / b1t) /
                         (std::sqrt(v[i] / b2t) + cfg.optimizer.epsilon);
        }
        for (const double p : params) {
            if (!std::isfinite(p)) {
                model.params() = snapshot;
                fail(Errc::NonFiniteLoss, "parameters became non-finite at iteration " +
                                              std::to_string(iter));
            }
        }

        TrainRecord::Entry entry;
        entry.iteration = iter;
        entry.loss = loss;
        entry.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        if (cfg.eval_interval > 0 && cfg.eval_hook && iter % cfg.eval_interval == 0) {
            entry.eval_metric = cfg.eval_hook(model);
        }
        record.entries.push_back(entry);

        if (cfg.checkpoint_interval > 0 && iter % cfg.checkpoint_interval == 0) {
            snapshot = model.params();
            if (!cfg.checkpoint_path.empty()) {
                save_checkpoint(model, cfg.checkpoint_path);
            }
        }
    }
    if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(model, cfg.checkpoint_path);
    }
    return record;
}

void save_train_record_csv(const TrainRecord& record, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << "iteration,loss\n";
    char buf[64];
    for (const auto& e : record.entries) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g\n", e.iteration, e.loss);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double grad_check(const Model& model, const ContextSequence& seq, int sample_size,
                  uint64_t seed) {
    if (sample_size <= 0) {
        return 0.0;
    }
    Model work = model;
    const std::vector<ContextSequence> batch{seq};
    std::vector<double> analytic;
    work.loss_and_gradient(batch, analytic);

    auto loss_at = [&](void) {
        const std::vector<double> logits = work.forward(seq);
        std::vector<int> targets;
        targets.reserve(seq.pairs.size());
        for (const auto& p : seq.pairs) {
            targets.push_back(p.y_true);
        }
        return Model::sequence_loss(logits, work.config().num_classes, targets);
    };

    Rng rng(Rng::mix(seed, 0x9cadULL));
    double max_rel = 0.0;
    for (int s = 0; s < sample_size; ++s) {
        const size_t idx = static_cast<size_t>(rng.below(work.param_count()));
        const double theta = work.params()[idx];
        const double h = 1e-4 * std::max(1.0, std::abs(theta));
        work.params()[idx] = theta + h;
        const double lp = loss_at();
        work.params()[idx] = theta - h;
        const double lm = loss_at();
        work.params()[idx] = theta;
        const double fd = (lp - lm) / (2.0 * h);
        const double ga = analytic[idx];
        const double denom = std::max(std::abs(fd) + std::abs(ga), 1e-8);
        max_rel = std::max(max_rel, std::abs(fd - ga) / denom);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

template <class T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), Errc::CorruptCheckpoint, "truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    const auto& c = model.config();
    out.write("ICLT", 4);
    write_pod<uint16_t>(out, 1);
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.layers));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.heads));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.embed_dim));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.context_pairs));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.num_classes));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.feature_dim));
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.weak_count));
    write_pod<uint8_t>(out, c.mode == SequenceMode::TF ? 0 : 1);
    write_pod<uint64_t>(out, c.seed);
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.layout().size()));
    for (const auto& t : model.layout()) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
        for (const uint32_t s : t.shape) {
            write_pod<uint32_t>(out, s);
        }
        out.write(reinterpret_cast<const char*>(model.params().data() + t.offset),
                  static_cast<std::streamsize>(t.count() * sizeof(double)));
    }
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::MissingFile, path);
    char magic[4] = {};
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "ICLT", 4) == 0, Errc::CorruptCheckpoint,
            "bad magic in " + path);
    const auto version = read_pod<uint16_t>(in);
    require(version == 1, Errc::VersionMismatch,
            "unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    c.layers = static_cast<int>(read_pod<uint32_t>(in));
    c.heads = static_cast<int>(read_pod<uint32_t>(in));
    c.embed_dim = static_cast<int>(read_pod<uint32_t>(in));
    c.context_pairs = static_cast<int>(read_pod<uint32_t>(in));
    c.num_classes = static_cast<int>(read_pod<uint32_t>(in));
    c.feature_dim = static_cast<int>(read_pod<uint32_t>(in));
    c.weak_count = static_cast<int>(read_pod<uint32_t>(in));
    c.mode = read_pod<uint8_t>(in) == 0 ? SequenceMode::TF : SequenceMode::DTF;
    c.seed = read_pod<uint64_t>(in);
    c.validate();

    Model model = Model::init(c);
    const auto count = read_pod<uint32_t>(in);
    require(count == model.layout().size(), Errc::CorruptCheckpoint, "tensor count mismatch");
    for (const auto& t : model.layout()) {
        const auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        require(in.good() && name == t.name, Errc::CorruptCheckpoint,
                "unexpected tensor '" + name + "'");
        const auto ndim = read_pod<uint32_t>(in);
        require(ndim == t.shape.size(), Errc::CorruptCheckpoint, "tensor rank mismatch");
        for (const uint32_t want : t.shape) {
            require(read_pod<uint32_t>(in) == want, Errc::CorruptCheckpoint,
                    "tensor shape mismatch");
        }
        in.read(reinterpret_cast<char*>(model.params().data() + t.offset),
                static_cast<std::streamsize>(t.count() * sizeof(double)));
        require(in.good(), Errc::CorruptCheckpoint, "truncated tensor payload");
    }
    return model;
}

}  // namespace iclids
