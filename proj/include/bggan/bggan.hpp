#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bggan/nn.hpp"
#include "bggan/spectral.hpp"
#include "bggan/synthdata.hpp"

namespace bggan {

struct TrainConfig {
    double lr_gen = 0.0005;
    double lr_disc = 0.0005;
    int batch_size = 8;
    int max_epochs = 1000;
    int n_rois = 90;
    double dropout = 0.5;
    int balancer_cutoff = 100;  // epochs with the Balancer in front of the critics
    double lambda_recon = 1.0;  // extra weight on the scheduled cycle term
    double lambda_sc = 1.0;     // per-domain weights on the cons/recon pieces
    double lambda_fc = 1.0;
    std::uint64_t seed = 1;
    int patience = 50;
    double min_improvement = 1e-5;
    double structural_threshold = 0.1;  // binarization defaults handed to analysis
    double functional_threshold = 0.3;
    bool lambda_p_remap = false;  // remap the Balancer weight into [1, 2]
    int inner_layers = 3;
    int hidden_dim = 12;
    int latent_dim = 12;
    int disc_hidden = 12;
    int classifier_hidden = 64;
    int n_classes = 2;

    void validate() const;
};

/// exp(-0.01 t) up to the cutoff, zero beyond it.
double lambda_schedule(int t, int cutoff);

struct LossReport {
    double l_gan = 0.0;
    double l_cons = 0.0;
    double l_recon = 0.0;
    double l_inden = 0.0;
    double l_cla = 0.0;
    double l_balancer_s = 0.0;
    double l_balancer_f = 0.0;
    double total = 0.0;
};

enum class Domain { structural, functional };
enum class Direction { sc2fc, fc2sc };

/// Latent-to-adjacency head: raw = latent latent^T; structural output is
/// shifted softplus (zero latent -> zero matrix) with a zero diagonal,
/// functional output is tanh with the diagonal forced to one.
struct GenCache {
    Matrix latent;
    Matrix raw;
    Domain domain = Domain::structural;
    bool valid = false;
};

Matrix generate_adjacency(const Matrix& latent, Domain domain);
Matrix generate_adjacency(const Matrix& latent, Domain domain, GenCache& cache);
Matrix generate_adjacency_backward(const GenCache& cache, const Matrix& grad_out);

/// Feature extractor: slice-shared GCN in (relu), a stack of InnerGCN layers
/// over the modality tensor, slice-shared linear GCN out, slice-mean pooling
/// down to one N x latent matrix.
struct ExtractorParams {
    Param w_in;
    std::vector<Param> kernels;
    Param w_out;
};

struct ExtractorCache {
    std::vector<GcnCache> gcn_in;
    std::vector<InnerGcnCache> inner;
    std::vector<GcnCache> gcn_out;
    Eigen::Index n = 0;
    int slices = 0;
    bool valid = false;
};

Matrix extractor_forward(const Tensor3& feats, const std::vector<Matrix>& adj_slices,
                         const SpectralBasis& basis, const ExtractorParams& p,
                         ExtractorCache& cache);

struct ExtractorInputGrads {
    Tensor3 dfeats;
    std::vector<Matrix> dadj;
};

/// Accumulates parameter gradients; input gradients are computed only when
/// requested (the second hop needs them to reach the generated matrix).
ExtractorInputGrads extractor_backward(const ExtractorCache& cache, ExtractorParams& p,
                                       const Matrix& dlatent, bool want_input_grads);

struct BgganModel {
    int n_rois = 0;
    int feat_dim = 0;
    int n_slices = 0;
    int hidden_dim = 0;
    int latent_dim = 0;
    int n_classes = 0;
    int disc_hidden = 0;
    int classifier_hidden = 0;
    int inner_layers = 0;

    ExtractorParams extractor_s, extractor_f;
    ClassifierParams classifier_s, classifier_f;
    DiscParams disc_s, disc_f;
    BalancerParams balancer_s, balancer_f;

    /// Fixed (untrained) per-slice re-embedding of a generated matrix into
    /// node features for the second extraction hop.
    std::vector<Matrix> proj;

    std::vector<Param*> generator_params();
    std::vector<Param*> discriminator_params();
    std::vector<Param*> balancer_params();
    std::vector<Param*> all_params();  // checkpoint declaration order
    std::vector<const Param*> all_params() const;
};

BgganModel make_model(const TrainConfig& cfg, int feat_dim, int n_slices, std::mt19937_64& rng);

/// Per-subject constants reused across epochs: the modality adjacency slices
/// and the spectral basis of their Laplacian tensor.
struct SubjectContext {
    const Subject* subject = nullptr;
    std::vector<Matrix> adj_slices;
    SpectralBasis basis;
};

SubjectContext make_context(const Subject& s);
std::vector<SubjectContext> make_contexts(const Cohort& cohort);

/// Everything one direction's forward pass produces, kept for the backward
/// sweep: source latent + classifier state, first-hop generated matrix, the
/// re-extraction of it, and the cycle-regenerated source-domain matrix.
struct DirectionPass {
    Direction dir = Direction::sc2fc;
    ExtractorCache ext1;
    Matrix latent1;
    ClassifierCache cla;
    GenCache gen1;
    Matrix out1;  // generated target-domain matrix E'
    Tensor3 feats2;
    std::vector<Matrix> adj2;
    ExtractorCache ext2;
    Matrix latent2;
    GenCache gen2;
    Matrix out2;  // regenerated source-domain matrix E''
    DiscCache disc1, disc2;
    double score1 = 0.0, score2 = 0.0;
};

/// Runs source extraction, classification, generation, re-extraction,
/// regeneration, and both critic scores for one direction.
void direction_forward(const BgganModel& model, const SubjectContext& ctx, Direction dir,
                       bool train, double dropout, std::mt19937_64& dropout_rng,
                       DirectionPass& pass);

/// Batch-mean loss pieces of one direction (classifier, construction MSE,
/// cycle MSE vs the real source, and both generator adversarial terms),
/// matching the per-term layout of the report.
struct DirectionLosses {
    double cla = 0.0;
    double cons = 0.0;
    double inden = 0.0;
    double gan = 0.0;
};

DirectionLosses direction_losses(const DirectionPass& pass, const SubjectContext& ctx);

double mse(const Matrix& a, const Matrix& b);

/// -lambda D(y) + mse(x, y); the Balancer's objective.
double balancer_loss(const Matrix& x_real, const Matrix& y_balanced, double disc_score,
                     double lambda);

/// One pass over the data in seeded-shuffled batches: critic updates (real
/// side through the Balancer while the schedule is live), Balancer updates,
/// then generator + classifier updates on the total. Returns per-subject mean
/// losses; per-batch reports are appended when batch_reports is given.
LossReport train_epoch(BgganModel& model, const std::vector<SubjectContext>& data,
                       const TrainConfig& cfg, int epoch_idx,
                       std::vector<LossReport>* batch_reports = nullptr);

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_cons = 0.0;
    std::vector<LossReport> reports;
};

/// Full training loop with early stopping on epoch-mean l_cons; appends one
/// CSV row per epoch to log_path when given.
TrainResult train(BgganModel& model, const std::vector<SubjectContext>& data,
                  const TrainConfig& cfg, const std::string& log_path = "");

Matrix infer(const BgganModel& model, const SubjectContext& ctx, Direction dir);
Matrix infer(const BgganModel& model, const Subject& s, Direction dir);

/// Binary checkpoint: "BGGAN1" magic, shape header, the fixed projection
/// slices, then every parameter value in declaration order, little-endian
/// doubles. Written atomically (temp file + rename).
void save_checkpoint(const std::string& path, const BgganModel& model);
BgganModel load_checkpoint(const std::string& path);

}  // namespace bggan
