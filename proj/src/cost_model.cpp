#include "efd/cost_model.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace efd {

using nlohmann::json;

namespace {

using I = std::int64_t;

// One affine layer applied to T rows: params k*n+n, macs T*k*n plus the bias
// adds.
CostRow affine_row(const std::string& name, I rows, I in, I out) {
    return {name, affine_params(in, out), matmul_macs(rows, in, out) + rows * out};
}

// Multi-head attention with d_q-dim queries over Tq tokens and d_in-dim
// keys/values over Tk tokens (head dims d_q/heads).
void attention_rows(std::vector<CostRow>& rows, const std::string& name, I tq, I tk, I d_q,
                    I d_in, I heads) {
    const I dk = d_q / heads;
    CostRow proj{name + ".proj", 0, 0};
    proj.params += heads * (d_q * dk + d_in * dk + d_in * dk);   // per-head Wq, Wk, Wv
    proj.params += (heads * dk) * d_q + d_q;                     // Wo + bias
    proj.macs += heads * (matmul_macs(tq, d_q, dk) + 2 * matmul_macs(tk, d_in, dk));
    proj.macs += matmul_macs(tq, heads * dk, d_q) + tq * d_q;
    rows.push_back(proj);
    rows.push_back({name + ".qk", 0, heads * matmul_macs(tq, dk, tk)});
    rows.push_back({name + ".softmax", 0, heads * 2 * tq * tk});
    rows.push_back({name + ".av", 0, heads * matmul_macs(tq, tk, dk)});
}

// Cascaded group attention over T tokens of dim D split into G groups.
void cga_rows(std::vector<CostRow>& rows, const std::string& name, I t, I dim, I groups) {
    const I dg = dim / groups;
    CostRow r{name, 0, 0};
    r.params += groups * 3 * dg * dg;                  // per-group Wq/Wk/Wv
    r.params += (groups - 1) * (dg * dg + dg);         // cascade projections
    r.params += dim * dim + dim;                       // output projection
    r.macs += groups * 3 * matmul_macs(t, dg, dg);     // projections
    r.macs += (groups - 1) * (matmul_macs(t, dg, dg) + 2 * t * dg);  // cascade + adds
    r.macs += groups * (matmul_macs(t, dg, t) + 2 * t * t + matmul_macs(t, t, dg));
    r.macs += matmul_macs(t, dim, dim) + t * dim;
    rows.push_back(r);
}

void ln_row(std::vector<CostRow>& rows, const std::string& name, I t, I dim, I count) {
    // Gamma + beta per norm; 5 ops/element normalization plus the affine.
    rows.push_back({name, count * 2 * dim, count * (5 * t * dim + 2 * t * dim)});
}

void mlp_row(std::vector<CostRow>& rows, const std::string& name, I t, I dim, I ratio) {
    CostRow r{name, 0, 0};
    r.params = affine_params(dim, dim * ratio) + affine_params(dim * ratio, dim);
    r.macs = matmul_macs(t, dim, dim * ratio) + t * dim * ratio  // affine + bias
             + t * dim * ratio                                   // gelu
             + matmul_macs(t, dim * ratio, dim) + t * dim;
    rows.push_back(r);
}

}  // namespace

std::int64_t CostReport::params_matching(const std::string& prefix) const {
    I n = 0;
    for (const auto& r : rows)
        if (r.name.rfind(prefix, 0) == 0) n += r.params;
    return n;
}

std::int64_t CostReport::macs_matching(const std::string& prefix) const {
    I n = 0;
    for (const auto& r : rows)
        if (r.name.rfind(prefix, 0) == 0) n += r.macs;
    return n;
}

CostReport count_params_and_macs(const ModelConfig& cfg) {
    cfg.validate();
    CostReport rep;
    rep.convention =
        "MACs for one forward pass of one sample; matmul (m,k)(k,n)=m*k*n MACs; "
        "elementwise 1/elem; layer_norm 5/elem; softmax 2/logit; Flops ~= 2*MACs";
    auto& rows = rep.rows;
    const I pdim = static_cast<I>(cfg.patch) * cfg.patch * cfg.in_channels;

    for (int stream = 0; stream < 2; ++stream) {
        const std::string sn = stream == 0 ? "backbone.main" : "backbone.side";
        const auto& dims = stream == 0 ? cfg.main_dims : cfg.side_dims;
        rows.push_back(affine_row(sn + ".embed", cfg.tokens_at(0), pdim, dims[0]));
        for (int s = 0; s < cfg.stages(); ++s) {
            const I t = cfg.tokens_at(s);
            const I d = dims[static_cast<size_t>(s)];
            const std::string sp = sn + ".stage" + std::to_string(s);
            rows.push_back({sp + ".pos", t * d, t * d});
            for (int b = 0; b < cfg.stage_blocks[static_cast<size_t>(s)]; ++b) {
                const std::string bp = sp + ".block" + std::to_string(b);
                cga_rows(rows, bp + ".attn", t, d, cfg.stage_groups[static_cast<size_t>(s)]);
                ln_row(rows, bp + ".ln", t, d, 2);
                mlp_row(rows, bp + ".mlp", t, d, cfg.backbone_mlp_ratio);
                rows.push_back({bp + ".residual", 0, 2 * t * d});
            }
            if (s + 1 < cfg.stages()) {
                const I t2 = cfg.tokens_at(s + 1);
                rows.push_back(affine_row(sp + ".merge", t2, 4 * d,
                                          dims[static_cast<size_t>(s + 1)]));
            }
        }
    }

    for (int s = 0; s < cfg.stages(); ++s) {
        if (!cfg.fusion_at(s)) continue;
        const I t = cfg.tokens_at(s);
        const I dm = cfg.main_dims[static_cast<size_t>(s)];
        const I ds = cfg.side_dims[static_cast<size_t>(s)];
        const std::string fp = "backbone.fuse" + std::to_string(s);
        attention_rows(rows, fp + ".main_q", t, t, dm, ds, cfg.fusion_heads);
        attention_rows(rows, fp + ".side_q", t, t, ds, dm, cfg.fusion_heads);
        rows.push_back({fp + ".residual", 0, t * dm + t * ds});
    }

    const I D = cfg.decoder_dim;
    const I P = cfg.final_tokens();
    const I T = cfg.decoder_tokens();
    {
        CostRow in{"decoder.inputs", 0, 0};
        in.params += static_cast<I>(cfg.n_pred_tokens) * D;  // prediction embeddings
        in.params += affine_params(1, D) + affine_params(cfg.n_commands, D) + affine_params(2, D);
        in.macs += 1 * D + static_cast<I>(cfg.n_commands) * D + 2 * D + 3 * D;
        in.params += affine_params(cfg.side_dims.back(), D) + affine_params(cfg.main_dims.back(), D);
        in.macs += matmul_macs(P, cfg.side_dims.back(), D) + P * D;
        in.macs += matmul_macs(P, cfg.main_dims.back(), D) + P * D;
        rows.push_back(in);
    }
    for (int l = 0; l < cfg.decoder_depth; ++l) {
        const std::string lp = "decoder.layer" + std::to_string(l);
        attention_rows(rows, lp + ".attn", T, T, D, D, cfg.decoder_heads);
        ln_row(rows, lp + ".ln", T, D, 2);
        mlp_row(rows, lp + ".mlp", T, D, cfg.decoder_mlp_ratio);
        rows.push_back({lp + ".residual", 0, 2 * T * D});
    }

    {
        const I H = cfg.gru_hidden;
        CostRow wp{"head.wp", 0, 0};
        wp.params += affine_params(D, H);                      // feature -> hidden
        wp.params += 3 * ((H + 4) * H + H);                    // gates
        wp.params += affine_params(H, 2);                      // delta output
        wp.macs += matmul_macs(1, D, H) + H;
        wp.macs += static_cast<I>(cfg.waypoints) *
                   (3 * (matmul_macs(1, H + 4, H) + H)   // gate affines
                    + 6 * H                              // gate elementwise
                    + matmul_macs(1, H, 2) + 2 + 2);     // delta + cumulative add
        rows.push_back(wp);
    }
    {
        CostRow ctrl{"head.ctrl", 0, 0};
        ctrl.params = affine_params(D, cfg.ctrl_hidden) + affine_params(cfg.ctrl_hidden, 3);
        ctrl.macs = matmul_macs(1, D, cfg.ctrl_hidden) + 2 * cfg.ctrl_hidden +
                    matmul_macs(1, cfg.ctrl_hidden, 3) + 6;
        rows.push_back(ctrl);
    }
    {
        CostRow sp{"head.speed", 0, 0};
        sp.params = affine_params(D, cfg.speed_hidden) + affine_params(cfg.speed_hidden, 1);
        sp.macs = matmul_macs(1, D, cfg.speed_hidden) + 2 * cfg.speed_hidden +
                  matmul_macs(1, cfg.speed_hidden, 1) + 1;
        rows.push_back(sp);
    }
    {
        CostRow ft{"head.feat", 0, 0};
        ft.params = affine_params(2 * D, cfg.latent_dim);
        ft.macs = matmul_macs(1, 2 * D, cfg.latent_dim) + cfg.latent_dim;
        rows.push_back(ft);
    }
    {
        CostRow est{"head.est", 0, 0};
        est.params = affine_params(cfg.ctrl_hidden, 1) + affine_params(cfg.gru_hidden, 1);
        est.macs = matmul_macs(1, cfg.ctrl_hidden, 1) + matmul_macs(1, cfg.gru_hidden, 1) + 2;
        rows.push_back(est);
    }

    for (const auto& r : rows) {
        rep.total_params += r.params;
        rep.total_macs += r.macs;
    }
    return rep;
}

std::string cost_report_text(const CostReport& r) {
    std::ostringstream os;
    os << "# " << r.convention << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-40s %14s %16s\n", "layer", "params", "MACs");
    os << buf;
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "%-40s %14lld %16lld\n", row.name.c_str(),
                      static_cast<long long>(row.params), static_cast<long long>(row.macs));
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-40s %14lld %16lld\n", "TOTAL",
                  static_cast<long long>(r.total_params), static_cast<long long>(r.total_macs));
    os << buf;
    std::snprintf(buf, sizeof(buf), "flops ~= %lld (2*MACs)\n",
                  static_cast<long long>(2 * r.total_macs));
    os << buf;
    return os.str();
}

std::string cost_report_json(const CostReport& r) {
    json j;
    j["convention"] = r.convention;
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"name", row.name}, {"params", row.params}, {"macs", row.macs}});
    j["rows"] = rows;
    j["total_params"] = r.total_params;
    j["total_macs"] = r.total_macs;
    j["total_flops"] = 2 * r.total_macs;
    return j.dump(2);
}

}  // namespace efd
