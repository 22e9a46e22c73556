#include "bggan/bggan.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "bggan/errors.hpp"
#include "bggan/rng.hpp"

namespace bggan {
namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix sign_of(const Matrix& m) {
    return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string("config: ") + name + " must be positive");
    }
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace

void TrainConfig::validate() const {
    require_positive(lr_gen, "lr_gen");
    require_positive(lr_disc, "lr_disc");
    require_positive(batch_size, "batch_size");
    require_positive(max_epochs, "max_epochs");
    require_positive(lambda_recon, "lambda_recon");
    require_positive(lambda_sc, "lambda_sc");
    require_positive(lambda_fc, "lambda_fc");
    require_positive(patience, "patience");
    if (n_rois < 2) {
        throw ValidationError("config: n_rois must be at least 2");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ValidationError("config: dropout must lie in [0, 1)");
    }
    if (balancer_cutoff < 0 || balancer_cutoff > max_epochs) {
        throw ValidationError("config: balancer_cutoff must lie in [0, max_epochs]");
    }
    if (min_improvement < 0.0 || !std::isfinite(min_improvement)) {
        throw ValidationError("config: min_improvement must be finite and nonnegative");
    }
    if (structural_threshold < 0.0 || functional_threshold < 0.0) {
        throw ValidationError("config: thresholds must be nonnegative");
    }
    if (inner_layers < 1 || hidden_dim < 1 || latent_dim < 1 || disc_hidden < 1 ||
        classifier_hidden < 1) {
        throw ValidationError("config: layer widths must be positive");
    }
    if (n_classes < 2) {
        throw ValidationError("config: n_classes must be at least 2");
    }
}

double lambda_schedule(int t, int cutoff) {
    if (t < 0) {
        throw ValidationError("lambda_schedule: negative epoch index");
    }
    return t <= cutoff ? std::exp(-0.01 * static_cast<double>(t)) : 0.0;
}

// ---------------------------------------------------------------------------
// Adjacency heads

Matrix generate_adjacency(const Matrix& latent, Domain domain, GenCache& cache) {
    cache.latent = latent;
    cache.raw = latent * latent.transpose();
    cache.domain = domain;
    cache.valid = true;

    const Eigen::Index n = cache.raw.rows();
    Matrix out(n, n);
    if (domain == Domain::structural) {
        out = cache.raw.unaryExpr(
            [](double v) { return std::max(softplus(v) - std::numbers::ln2, 0.0); });
        out.diagonal().setZero();
    } else {
        out = cache.raw.array().tanh().matrix();
        out.diagonal().setOnes();
    }
    return out;
}

Matrix generate_adjacency(const Matrix& latent, Domain domain) {
    GenCache cache;
    return generate_adjacency(latent, domain, cache);
}

Matrix generate_adjacency_backward(const GenCache& cache, const Matrix& grad_out) {
    if (!cache.valid) {
        throw ValidationError("generate_adjacency_backward: stale cache");
    }
    const Eigen::Index n = cache.raw.rows();
    Matrix draw(n, n);
    if (cache.domain == Domain::structural) {
        // shifted softplus is flat wherever raw <= 0 (the clamp region)
        draw = cache.raw.unaryExpr([](double v) { return v > 0.0 ? sigmoid(v) : 0.0; })
                   .cwiseProduct(grad_out);
    } else {
        draw = cache.raw.unaryExpr([](double v) {
                            const double th = std::tanh(v);
                            return 1.0 - th * th;
                        })
                   .cwiseProduct(grad_out);
    }
    draw.diagonal().setZero();  // both heads overwrite the diagonal
    return (draw + draw.transpose()) * cache.latent;
}

// ---------------------------------------------------------------------------
// Extractor

Matrix extractor_forward(const Tensor3& feats, const std::vector<Matrix>& adj_slices,
                         const SpectralBasis& basis, const ExtractorParams& p,
                         ExtractorCache& cache) {
    const int r = static_cast<int>(feats.num_slices());
    if (static_cast<int>(adj_slices.size()) != r) {
        throw ValidationError("extractor: adjacency slice count does not match features");
    }
    cache.gcn_in.assign(static_cast<std::size_t>(r), GcnCache{});
    cache.gcn_out.assign(static_cast<std::size_t>(r), GcnCache{});
    cache.inner.assign(p.kernels.size(), InnerGcnCache{});

    std::vector<Matrix> h(static_cast<std::size_t>(r));
    for (int k = 0; k < r; ++k) {
        h[static_cast<std::size_t>(k)] =
            gcn_forward(feats.real_slice(k), adj_slices[static_cast<std::size_t>(k)], p.w_in.mat(),
                        cache.gcn_in[static_cast<std::size_t>(k)], true);
    }
    Tensor3 t = Tensor3::from_real_slices(std::move(h));
    for (std::size_t i = 0; i < p.kernels.size(); ++i) {
        t = innergcn_forward(t, p.kernels[i].tensor(), basis, cache.inner[i]);
    }

    Matrix latent = Matrix::Zero(feats.rows(), p.w_out.cols);
    for (int k = 0; k < r; ++k) {
        latent += gcn_forward(t.real_slice(k), adj_slices[static_cast<std::size_t>(k)],
                              p.w_out.mat(), cache.gcn_out[static_cast<std::size_t>(k)], false);
    }
    latent /= static_cast<double>(r);

    cache.n = feats.rows();
    cache.slices = r;
    cache.valid = true;
    return latent;
}

ExtractorInputGrads extractor_backward(const ExtractorCache& cache, ExtractorParams& p,
                                       const Matrix& dlatent, bool want_input_grads) {
    if (!cache.valid) {
        throw ValidationError("extractor_backward: stale cache");
    }
    const int r = cache.slices;
    ExtractorInputGrads out;
    if (want_input_grads) {
        out.dadj.assign(static_cast<std::size_t>(r), Matrix::Zero(cache.n, cache.n));
    }

    const Matrix dslice = dlatent / static_cast<double>(r);
    std::vector<Matrix> dh(static_cast<std::size_t>(r));
    for (int k = 0; k < r; ++k) {
        GcnGrads g = gcn_backward(cache.gcn_out[static_cast<std::size_t>(k)], dslice);
        dh[static_cast<std::size_t>(k)] = std::move(g.dx);
        p.w_out.grad_mat() += g.dw;
        if (want_input_grads) {
            out.dadj[static_cast<std::size_t>(k)] += g.dadj;
        }
    }

    Tensor3 dt = Tensor3::from_real_slices(std::move(dh));
    for (std::size_t i = p.kernels.size(); i-- > 0;) {
        InnerGcnGrads g = innergcn_backward(cache.inner[i], dt);
        p.kernels[i].add_tensor_grad(g.dg);
        dt = std::move(g.dx);
    }

    std::vector<Matrix> dfeats(static_cast<std::size_t>(r));
    for (int k = 0; k < r; ++k) {
        GcnGrads g = gcn_backward(cache.gcn_in[static_cast<std::size_t>(k)], dt.real_slice(k));
        p.w_in.grad_mat() += g.dw;
        if (want_input_grads) {
            out.dadj[static_cast<std::size_t>(k)] += g.dadj;
            dfeats[static_cast<std::size_t>(k)] = std::move(g.dx);
        }
    }
    if (want_input_grads) {
        out.dfeats = Tensor3::from_real_slices(std::move(dfeats));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model assembly

namespace {

template <typename ModelT, typename ParamPtr>
void collect_params(ModelT& m, std::vector<ParamPtr>& gen, std::vector<ParamPtr>& disc,
                    std::vector<ParamPtr>& bal) {
    for (auto* e : {&m.extractor_s, &m.extractor_f}) {
        gen.push_back(&e->w_in);
        for (auto& k : e->kernels) {
            gen.push_back(&k);
        }
        gen.push_back(&e->w_out);
    }
    for (auto* c : {&m.classifier_s, &m.classifier_f}) {
        gen.push_back(&c->w1);
        gen.push_back(&c->b1);
        gen.push_back(&c->w2);
        gen.push_back(&c->b2);
    }
    for (auto* d : {&m.disc_s, &m.disc_f}) {
        disc.push_back(&d->w1);
        disc.push_back(&d->w2);
        disc.push_back(&d->wout);
        disc.push_back(&d->bout);
    }
    for (auto* b : {&m.balancer_s, &m.balancer_f}) {
        bal.push_back(&b->k1);
        bal.push_back(&b->b1);
        bal.push_back(&b->k2);
        bal.push_back(&b->b2);
    }
}

}  // namespace

std::vector<Param*> BgganModel::generator_params() {
    std::vector<Param*> gen, disc, bal;
    collect_params(*this, gen, disc, bal);
    return gen;
}

std::vector<Param*> BgganModel::discriminator_params() {
    std::vector<Param*> gen, disc, bal;
    collect_params(*this, gen, disc, bal);
    return disc;
}

std::vector<Param*> BgganModel::balancer_params() {
    std::vector<Param*> gen, disc, bal;
    collect_params(*this, gen, disc, bal);
    return bal;
}

std::vector<Param*> BgganModel::all_params() {
    std::vector<Param*> gen, disc, bal;
    collect_params(*this, gen, disc, bal);
    gen.insert(gen.end(), disc.begin(), disc.end());
    gen.insert(gen.end(), bal.begin(), bal.end());
    return gen;
}

std::vector<const Param*> BgganModel::all_params() const {
    std::vector<const Param*> gen, disc, bal;
    collect_params(*this, gen, disc, bal);
    gen.insert(gen.end(), disc.begin(), disc.end());
    gen.insert(gen.end(), bal.begin(), bal.end());
    return gen;
}

BgganModel make_model(const TrainConfig& cfg, int feat_dim, int n_slices, std::mt19937_64& rng) {
    cfg.validate();
    if (feat_dim < 1 || n_slices < 1) {
        throw ValidationError("make_model: feat_dim and n_slices must be positive");
    }

    BgganModel m;
    m.n_rois = cfg.n_rois;
    m.feat_dim = feat_dim;
    m.n_slices = n_slices;
    m.hidden_dim = cfg.hidden_dim;
    m.latent_dim = cfg.latent_dim;
    m.n_classes = cfg.n_classes;
    m.disc_hidden = cfg.disc_hidden;
    m.classifier_hidden = cfg.classifier_hidden;
    m.inner_layers = cfg.inner_layers;

    auto build_extractor = [&](ExtractorParams& e) {
        e.w_in = Param::zeros(feat_dim, cfg.hidden_dim);
        glorot_init(e.w_in, rng);
        e.kernels.clear();
        for (int i = 0; i < cfg.inner_layers; ++i) {
            Param k = Param::zeros(cfg.n_rois, cfg.hidden_dim, n_slices);
            gaussian_init(k, 0.01, rng);
            e.kernels.push_back(std::move(k));
        }
        e.w_out = Param::zeros(cfg.hidden_dim, cfg.latent_dim);
        glorot_init(e.w_out, rng);
    };
    build_extractor(m.extractor_s);
    build_extractor(m.extractor_f);

    const Eigen::Index cla_in = static_cast<Eigen::Index>(cfg.n_rois) * cfg.latent_dim;
    m.classifier_s = make_classifier(cla_in, cfg.classifier_hidden, cfg.n_classes, rng);
    m.classifier_f = make_classifier(cla_in, cfg.classifier_hidden, cfg.n_classes, rng);

    m.disc_s = make_discriminator(cfg.n_rois, cfg.disc_hidden, rng);
    m.disc_f = make_discriminator(cfg.n_rois, cfg.disc_hidden, rng);

    m.balancer_s = make_balancer(rng);
    m.balancer_f = make_balancer(rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.n_rois));
    m.proj.assign(static_cast<std::size_t>(n_slices), Matrix(cfg.n_rois, feat_dim));
    for (Matrix& pk : m.proj) {
        for (Eigen::Index j = 0; j < pk.cols(); ++j) {
            for (Eigen::Index i = 0; i < pk.rows(); ++i) {
                pk(i, j) = gauss(rng) * scale;
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Per-subject context

SubjectContext make_context(const Subject& s) {
    SubjectContext ctx;
    ctx.subject = &s;
    const Tensor3 adj = adjacency_tensor(s);
    ctx.adj_slices = adj.real_slices();
    ctx.basis = spectral_basis(normalized_laplacian(adj));
    return ctx;
}

std::vector<SubjectContext> make_contexts(const Cohort& cohort) {
    std::vector<SubjectContext> out;
    out.reserve(cohort.size());
    for (const Subject& s : cohort) {
        out.push_back(make_context(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward pipeline

void direction_forward(const BgganModel& model, const SubjectContext& ctx, Direction dir,
                       bool train, double dropout, std::mt19937_64& dropout_rng,
                       DirectionPass& pass) {
    const Subject& s = *ctx.subject;
    if (s.sc.rows() != model.n_rois || s.feats.cols() != model.feat_dim ||
        s.feats.num_slices() != model.n_slices) {
        throw ValidationError("direction_forward: subject shape does not match the model");
    }
    const bool s2f = dir == Direction::sc2fc;
    const ExtractorParams& ext_src = s2f ? model.extractor_s : model.extractor_f;
    const ExtractorParams& ext_tgt = s2f ? model.extractor_f : model.extractor_s;
    const ClassifierParams& cla = s2f ? model.classifier_s : model.classifier_f;
    const DiscParams& disc_tgt = s2f ? model.disc_f : model.disc_s;
    const DiscParams& disc_src = s2f ? model.disc_s : model.disc_f;
    const Domain tgt_domain = s2f ? Domain::functional : Domain::structural;
    const Domain src_domain = s2f ? Domain::structural : Domain::functional;

    pass.dir = dir;
    pass.latent1 = extractor_forward(s.feats, ctx.adj_slices, ctx.basis, ext_src, pass.ext1);
    classifier_forward(flatten(pass.latent1), cla, pass.cla, train, dropout, dropout_rng);
    pass.out1 = generate_adjacency(pass.latent1, tgt_domain, pass.gen1);

    // second hop: re-embed the generated matrix and extract it back
    pass.adj2.assign(static_cast<std::size_t>(model.n_slices), pass.out1.cwiseAbs());
    std::vector<Matrix> f2(static_cast<std::size_t>(model.n_slices));
    for (std::size_t k = 0; k < f2.size(); ++k) {
        f2[k] = pass.out1 * model.proj[k];
    }
    pass.feats2 = Tensor3::from_real_slices(std::move(f2));
    pass.latent2 = extractor_forward(pass.feats2, pass.adj2, ctx.basis, ext_tgt, pass.ext2);
    pass.out2 = generate_adjacency(pass.latent2, src_domain, pass.gen2);

    pass.score1 = discriminator_forward(pass.out1.cwiseAbs(), pass.out1, disc_tgt, pass.disc1);
    pass.score2 = discriminator_forward(pass.out2.cwiseAbs(), pass.out2, disc_src, pass.disc2);
}

double mse(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError("mse: shape mismatch");
    }
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

DirectionLosses direction_losses(const DirectionPass& pass, const SubjectContext& ctx) {
    const Subject& s = *ctx.subject;
    const bool s2f = pass.dir == Direction::sc2fc;
    const Matrix& real_tgt = s2f ? s.fc : s.sc;
    const Matrix& real_src = s2f ? s.sc : s.fc;

    DirectionLosses out;
    out.cla = cross_entropy(pass.cla.probs, s.label);
    out.cons = mse(real_tgt, pass.out1);
    out.inden = mse(real_src, pass.out2);
    const double d1 = pass.score1 - 1.0;
    const double d2 = pass.score2 - 1.0;
    out.gan = d1 * d1 + d2 * d2;
    return out;
}

double balancer_loss(const Matrix& x_real, const Matrix& y_balanced, double disc_score,
                     double lambda) {
    return -lambda * disc_score + mse(x_real, y_balanced);
}

// ---------------------------------------------------------------------------
// Training

namespace {

void check_finite(double v, const char* term, int epoch_idx) {
    if (!std::isfinite(v)) {
        throw NumericalError(std::string("non-finite ") + term + " at epoch " +
                             std::to_string(epoch_idx));
    }
}

// d|M|/dM chained with a downstream adjacency gradient.
Matrix through_abs(const Matrix& m, const Matrix& dabs) { return sign_of(m).cwiseProduct(dabs); }

struct BatchSlice {
    const std::vector<SubjectContext>& data;
    const std::vector<int>& order;
    std::size_t begin, end;

    std::size_t size() const { return end - begin; }
    const SubjectContext& ctx(std::size_t b) const {
        return data[static_cast<std::size_t>(order[begin + b])];
    }
};

// Critic update for one domain; the fakes come from both hops. Returns the
// batch-mean critic loss (not part of the generator report).
void update_discriminator(DiscParams& disc, const BatchSlice& batch,
                          const std::vector<Matrix>& reals, const std::vector<const Matrix*>& fake1,
                          const std::vector<const Matrix*>& fake2, double lr) {
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        DiscCache cr;
        const double sr = discriminator_forward(reals[b].cwiseAbs(), reals[b], disc, cr);
        discriminator_backward(cr, disc, 2.0 * (sr - 1.0) * scale, true);

        for (const Matrix* fake : {fake1[b], fake2[b]}) {
            DiscCache cf;
            const double sf = discriminator_forward(fake->cwiseAbs(), *fake, disc, cf);
            discriminator_backward(cf, disc, sf * scale, true);  // d(0.5 s^2) = s
        }
    }
    for (Param* p : {&disc.w1, &disc.w2, &disc.wout, &disc.bout}) {
        adam_step(*p, lr);
    }
}

// Balancer update for one domain against the (already stepped) critic.
// Returns the batch-mean Balancer loss.
double update_balancer(BalancerParams& bal, DiscParams& disc, const BatchSlice& batch,
                       bool target_is_fc, double lambda_b, double lr) {
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Subject& s = *batch.ctx(b).subject;
        const Matrix& x = target_is_fc ? s.fc : s.sc;
        const Matrix& other = target_is_fc ? s.sc : s.fc;

        BalancerCache bc;
        const Matrix y = balancer_forward(x, other, bal, bc);
        DiscCache dc;
        const double score = discriminator_forward(y.cwiseAbs(), y, disc, dc);
        loss_sum += balancer_loss(x, y, score, lambda_b);

        DiscInputGrads ig = discriminator_backward(dc, disc, 1.0, false);
        Matrix dy = -lambda_b * (through_abs(y, ig.dadj) + ig.dfeats);
        dy += 2.0 / static_cast<double>(x.size()) * (y - x);
        balancer_backward(bc, bal, dy * scale);
    }
    for (Param* p : {&bal.k1, &bal.b1, &bal.k2, &bal.b2}) {
        adam_step(*p, lr);
    }
    return loss_sum * scale;
}

}  // namespace

LossReport train_epoch(BgganModel& model, const std::vector<SubjectContext>& data,
                       const TrainConfig& cfg, int epoch_idx,
                       std::vector<LossReport>* batch_reports) {
    cfg.validate();
    if (data.empty()) {
        throw ValidationError("train_epoch: empty dataset");
    }
    for (const SubjectContext& ctx : data) {
        if (ctx.subject == nullptr) {
            throw ValidationError("train_epoch: dangling subject context");
        }
        if (ctx.subject->label >= model.n_classes) {
            throw ValidationError("train_epoch: label outside the configured class count");
        }
    }

    const double lam = lambda_schedule(epoch_idx, cfg.balancer_cutoff);
    const bool balancer_live = lam > 0.0;
    const double lam_balancer = cfg.lambda_p_remap && balancer_live ? 1.0 + lam : lam;
    const double recon_weight = cfg.lambda_recon * lam;

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = make_rng(cfg.seed, 0xA0000000ULL + static_cast<std::uint64_t>(epoch_idx));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng() % i]);
    }
    auto dropout_rng = make_rng(cfg.seed, 0xD0000000ULL + static_cast<std::uint64_t>(epoch_idx));

    LossReport epoch_sum;
    std::size_t n_seen = 0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
        const BatchSlice batch{
            data, order, start,
            std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size))};
        const std::size_t bn = batch.size();
        const double scale = 1.0 / static_cast<double>(bn);

        std::vector<DirectionPass> ps(bn), pf(bn);
        for (std::size_t b = 0; b < bn; ++b) {
            direction_forward(model, batch.ctx(b), Direction::sc2fc, true, cfg.dropout,
                              dropout_rng, ps[b]);
            direction_forward(model, batch.ctx(b), Direction::fc2sc, true, cfg.dropout,
                              dropout_rng, pf[b]);
        }

        // --- critics; their real side passes through the Balancer while live
        std::vector<Matrix> real_f(bn), real_s(bn);
        for (std::size_t b = 0; b < bn; ++b) {
            const Subject& s = *batch.ctx(b).subject;
            if (balancer_live) {
                BalancerCache bc;
                real_f[b] = balancer_forward(s.fc, s.sc, model.balancer_f, bc);
                real_s[b] = balancer_forward(s.sc, s.fc, model.balancer_s, bc);
            } else {
                real_f[b] = s.fc;
                real_s[b] = s.sc;
            }
        }
        std::vector<const Matrix*> fake_f1(bn), fake_f2(bn), fake_s1(bn), fake_s2(bn);
        for (std::size_t b = 0; b < bn; ++b) {
            fake_f1[b] = &ps[b].out1;  // generated fc
            fake_f2[b] = &pf[b].out2;  // cycle-regenerated fc
            fake_s1[b] = &pf[b].out1;  // generated sc
            fake_s2[b] = &ps[b].out2;  // cycle-regenerated sc
        }
        update_discriminator(model.disc_f, batch, real_f, fake_f1, fake_f2, cfg.lr_disc);
        update_discriminator(model.disc_s, batch, real_s, fake_s1, fake_s2, cfg.lr_disc);

        // --- Balancers against the stepped critics
        double bal_s = 0.0, bal_f = 0.0;
        if (balancer_live) {
            bal_f = update_balancer(model.balancer_f, model.disc_f, batch, true, lam_balancer,
                                    cfg.lr_disc);
            bal_s = update_balancer(model.balancer_s, model.disc_s, batch, false, lam_balancer,
                                    cfg.lr_disc);
        }

        // --- generators + classifiers on the total; critic scores refreshed
        for (std::size_t b = 0; b < bn; ++b) {
            ps[b].score1 =
                discriminator_forward(ps[b].out1.cwiseAbs(), ps[b].out1, model.disc_f, ps[b].disc1);
            ps[b].score2 =
                discriminator_forward(ps[b].out2.cwiseAbs(), ps[b].out2, model.disc_s, ps[b].disc2);
            pf[b].score1 =
                discriminator_forward(pf[b].out1.cwiseAbs(), pf[b].out1, model.disc_s, pf[b].disc1);
            pf[b].score2 =
                discriminator_forward(pf[b].out2.cwiseAbs(), pf[b].out2, model.disc_f, pf[b].disc2);
        }

        LossReport rep;
        rep.l_balancer_s = bal_s;
        rep.l_balancer_f = bal_f;
        for (std::size_t b = 0; b < bn; ++b) {
            const SubjectContext& ctx = batch.ctx(b);
            const DirectionLosses ls = direction_losses(ps[b], ctx);
            const DirectionLosses lf = direction_losses(pf[b], ctx);
            rep.l_cla += scale * (ls.cla + lf.cla);
            rep.l_cons += scale * (cfg.lambda_fc * ls.cons + cfg.lambda_sc * lf.cons);
            rep.l_inden += scale * (ls.inden + lf.inden);
            rep.l_gan += scale * (ls.gan + lf.gan);
            rep.l_recon += scale * recon_weight *
                           (cfg.lambda_sc * mse(pf[b].out1, ps[b].out2) +
                            cfg.lambda_fc * mse(ps[b].out1, pf[b].out2));
        }
        rep.total = rep.l_gan + rep.l_cons + rep.l_recon + rep.l_inden + rep.l_cla;
        check_finite(rep.l_gan, "l_gan", epoch_idx);
        check_finite(rep.l_cons, "l_cons", epoch_idx);
        check_finite(rep.l_recon, "l_recon", epoch_idx);
        check_finite(rep.l_inden, "l_inden", epoch_idx);
        check_finite(rep.l_cla, "l_cla", epoch_idx);
        check_finite(rep.l_balancer_s, "l_balancer_s", epoch_idx);
        check_finite(rep.l_balancer_f, "l_balancer_f", epoch_idx);

        // --- backward
        for (std::size_t b = 0; b < bn; ++b) {
            const SubjectContext& ctx = batch.ctx(b);
            const Subject& subj = *ctx.subject;
            const double nn = static_cast<double>(subj.sc.size());

            Matrix d_ps1 = Matrix::Zero(model.n_rois, model.n_rois);
            Matrix d_ps2 = d_ps1, d_pf1 = d_ps1, d_pf2 = d_ps1;

            // construction terms
            d_ps1 += cfg.lambda_fc * scale * 2.0 / nn * (ps[b].out1 - subj.fc);
            d_pf1 += cfg.lambda_sc * scale * 2.0 / nn * (pf[b].out1 - subj.sc);
            // cycle-vs-real terms
            d_ps2 += scale * 2.0 / nn * (ps[b].out2 - subj.sc);
            d_pf2 += scale * 2.0 / nn * (pf[b].out2 - subj.fc);
            // cycle-vs-generated terms
            if (recon_weight > 0.0) {
                const Matrix rs = recon_weight * cfg.lambda_sc * scale * 2.0 / nn *
                                  (ps[b].out2 - pf[b].out1);
                d_ps2 += rs;
                d_pf1 -= rs;
                const Matrix rf = recon_weight * cfg.lambda_fc * scale * 2.0 / nn *
                                  (pf[b].out2 - ps[b].out1);
                d_pf2 += rf;
                d_ps1 -= rf;
            }
            // adversarial terms through the frozen critics
            auto adversarial = [&](DirectionPass& pass, DiscParams& dtgt, DiscParams& dsrc,
                                   Matrix& dout1, Matrix& dout2) {
                DiscInputGrads g1 = discriminator_backward(pass.disc1, dtgt,
                                                           2.0 * (pass.score1 - 1.0) * scale,
                                                           false);
                dout1 += through_abs(pass.out1, g1.dadj) + g1.dfeats;
                DiscInputGrads g2 = discriminator_backward(pass.disc2, dsrc,
                                                           2.0 * (pass.score2 - 1.0) * scale,
                                                           false);
                dout2 += through_abs(pass.out2, g2.dadj) + g2.dfeats;
            };
            adversarial(ps[b], model.disc_f, model.disc_s, d_ps1, d_ps2);
            adversarial(pf[b], model.disc_s, model.disc_f, d_pf1, d_pf2);

            // walk each direction back to its source extractor
            auto pass_backward = [&](DirectionPass& pass, ExtractorParams& ext_src,
                                     ExtractorParams& ext_tgt, ClassifierParams& cla,
                                     const Matrix& dout1_in, const Matrix& dout2) {
                Matrix dout1 = dout1_in;
                const Matrix dlat2 = generate_adjacency_backward(pass.gen2, dout2);
                ExtractorInputGrads ig = extractor_backward(pass.ext2, ext_tgt, dlat2, true);
                for (std::size_t k = 0; k < model.proj.size(); ++k) {
                    dout1 += ig.dfeats.real_slice(static_cast<Eigen::Index>(k)) *
                             model.proj[k].transpose();
                    dout1 += through_abs(pass.out1, ig.dadj[k]);
                }
                Matrix dlat1 = generate_adjacency_backward(pass.gen1, dout1);
                const Vector dflat = classifier_backward(pass.cla, cla, ctx.subject->label, scale);
                dlat1 += unflatten(dflat, dlat1.rows(), dlat1.cols());
                extractor_backward(pass.ext1, ext_src, dlat1, false);
            };
            pass_backward(ps[b], model.extractor_s, model.extractor_f, model.classifier_s, d_ps1,
                          d_ps2);
            pass_backward(pf[b], model.extractor_f, model.extractor_s, model.classifier_f, d_pf1,
                          d_pf2);
        }
        for (Param* p : model.generator_params()) {
            adam_step(*p, cfg.lr_gen);
        }

        if (batch_reports != nullptr) {
            batch_reports->push_back(rep);
        }
        const double w = static_cast<double>(bn);
        epoch_sum.l_gan += rep.l_gan * w;
        epoch_sum.l_cons += rep.l_cons * w;
        epoch_sum.l_recon += rep.l_recon * w;
        epoch_sum.l_inden += rep.l_inden * w;
        epoch_sum.l_cla += rep.l_cla * w;
        epoch_sum.l_balancer_s += rep.l_balancer_s * w;
        epoch_sum.l_balancer_f += rep.l_balancer_f * w;
        n_seen += bn;
    }

    const double inv = 1.0 / static_cast<double>(n_seen);
    epoch_sum.l_gan *= inv;
    epoch_sum.l_cons *= inv;
    epoch_sum.l_recon *= inv;
    epoch_sum.l_inden *= inv;
    epoch_sum.l_cla *= inv;
    epoch_sum.l_balancer_s *= inv;
    epoch_sum.l_balancer_f *= inv;
    epoch_sum.total = epoch_sum.l_gan + epoch_sum.l_cons + epoch_sum.l_recon + epoch_sum.l_inden +
                      epoch_sum.l_cla;
    return epoch_sum;
}

TrainResult train(BgganModel& model, const std::vector<SubjectContext>& data,
                  const TrainConfig& cfg, const std::string& log_path) {
    std::ofstream log;
    if (!log_path.empty()) {
        const bool fresh = !std::filesystem::exists(log_path) ||
                           std::filesystem::file_size(log_path) == 0;
        log.open(log_path, std::ios::app);
        if (!log) {
            throw ValidationError("cannot open training log: " + log_path);
        }
        if (fresh) {
            log << "epoch,l_gan,l_cons,l_recon,l_inden,l_cla,l_balancer_s,l_balancer_f,total,"
                   "lambda,wall_time_ms\n";
        }
    }

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const LossReport rep = train_epoch(model, data, cfg, epoch);
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        result.reports.push_back(rep);
        result.epochs_run = epoch + 1;

        if (log.is_open()) {
            char line[512];
            std::snprintf(line, sizeof(line),
                          "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%lld\n", epoch,
                          rep.l_gan, rep.l_cons, rep.l_recon, rep.l_inden, rep.l_cla,
                          rep.l_balancer_s, rep.l_balancer_f, rep.total,
                          lambda_schedule(epoch, cfg.balancer_cutoff),
                          static_cast<long long>(ms));
            log << line;
            log.flush();
        }

        if (rep.l_cons < best - cfg.min_improvement) {
            best = rep.l_cons;
            result.best_epoch = epoch;
            result.best_cons = best;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) {
                break;
            }
        }
    }
    return result;
}

Matrix infer(const BgganModel& model, const SubjectContext& ctx, Direction dir) {
    const Subject& s = *ctx.subject;
    if (s.sc.rows() != model.n_rois || s.feats.cols() != model.feat_dim ||
        s.feats.num_slices() != model.n_slices) {
        throw ValidationError("infer: subject shape does not match the model");
    }
    const ExtractorParams& ext = dir == Direction::sc2fc ? model.extractor_s : model.extractor_f;
    ExtractorCache cache;
    const Matrix latent = extractor_forward(s.feats, ctx.adj_slices, ctx.basis, ext, cache);
    return generate_adjacency(latent,
                              dir == Direction::sc2fc ? Domain::functional : Domain::structural);
}

Matrix infer(const BgganModel& model, const Subject& s, Direction dir) {
    const SubjectContext ctx = make_context(s);
    return infer(model, ctx, dir);
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

constexpr char kMagic[6] = {'B', 'G', 'G', 'A', 'N', '1'};

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t count, const std::string& path) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
        throw ValidationError("checkpoint truncated: " + path);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const BgganModel& model) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw ValidationError("cannot write checkpoint: " + tmp);
        }
        out.write(kMagic, sizeof(kMagic));
        const std::int64_t dims[9] = {model.n_rois,      model.feat_dim,
                                      model.n_slices,    model.hidden_dim,
                                      model.latent_dim,  model.n_classes,
                                      model.disc_hidden, model.classifier_hidden,
                                      model.inner_layers};
        out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        for (const Matrix& pk : model.proj) {
            write_doubles(out, pk.data(), static_cast<std::size_t>(pk.size()));
        }
        for (const Param* p : model.all_params()) {
            write_doubles(out, p->value.data(), static_cast<std::size_t>(p->value.size()));
        }
        if (!out) {
            throw ValidationError("short write on checkpoint: " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

BgganModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("missing file: " + path);
    }
    char magic[6];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ValidationError("bad checkpoint magic: " + path);
    }
    std::int64_t dims[9];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (static_cast<std::size_t>(in.gcount()) != sizeof(dims)) {
        throw ValidationError("checkpoint truncated: " + path);
    }
    for (std::int64_t d : dims) {
        if (d < 1 || d > 10'000) {
            throw ValidationError("checkpoint header has an implausible dimension: " + path);
        }
    }

    TrainConfig cfg;
    cfg.n_rois = static_cast<int>(dims[0]);
    cfg.hidden_dim = static_cast<int>(dims[3]);
    cfg.latent_dim = static_cast<int>(dims[4]);
    cfg.n_classes = static_cast<int>(dims[5]);
    cfg.disc_hidden = static_cast<int>(dims[6]);
    cfg.classifier_hidden = static_cast<int>(dims[7]);
    cfg.inner_layers = static_cast<int>(dims[8]);
    auto rng = make_rng(0);
    BgganModel model = make_model(cfg, static_cast<int>(dims[1]), static_cast<int>(dims[2]), rng);

    for (Matrix& pk : model.proj) {
        read_doubles(in, pk.data(), static_cast<std::size_t>(pk.size()), path);
    }
    for (Param* p : model.all_params()) {
        read_doubles(in, p->value.data(), static_cast<std::size_t>(p->value.size()), path);
    }
    char extra;
    in.read(&extra, 1);
    if (!in.eof()) {
        throw ValidationError("checkpoint has trailing data: " + path);
    }
    return model;
}

}  // namespace bggan
