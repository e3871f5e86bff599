#pragma once

#include "disro/core/ops.hpp"
#include "disro/core/rng.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace disro::model {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Architecture description. The stem outputs base_channels; extractor stage i
/// maps base*2^i -> base*2^(i+1) channels at stride 2, so the intermediate
/// feature map has base*2^extractor_blocks channels. Each encoder is one
/// residual block onto latent_dim channels followed by global average pooling.
struct BackboneConfig {
    int64_t in_channels = 3;
    int64_t in_height = 32;
    int64_t in_width = 32;
    int64_t extractor_blocks = 2;
    int64_t base_channels = 160;
    int64_t latent_dim = 640;
    int64_t num_classes = 10;
    double grl_lambda = 1.0;
    int64_t disc_hidden = 256;
    int64_t recon_hidden = 0;  // 0 = twice the feature channels
    int64_t norm_groups = 8;
    std::vector<double> norm_mean;  // optional input normalization, applied inside extract
    std::vector<double> norm_std;

    int64_t feature_channels() const { return base_channels << extractor_blocks; }
    int64_t feature_height() const { return in_height >> extractor_blocks; }
    int64_t feature_width() const { return in_width >> extractor_blocks; }
    int64_t recon_hidden_channels() const {
        return recon_hidden > 0 ? recon_hidden : 2 * feature_channels();
    }

    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

/// Largest divisor of c that is <= want; group-norm group count.
int64_t pick_groups(int64_t c, int64_t want);

using ParamVisitor = std::function<void(const std::string&, nn::Param&)>;

struct Conv {
    nn::Param w, b;
    int64_t stride = 1, pad = 1;
    void init(int64_t co, int64_t ci, int64_t k, int64_t stride, int64_t pad, Rng& rng);
    nn::NodeRef fwd(nn::Tape& t, const nn::NodeRef& x, bool detached) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ConvT {
    nn::Param w, b;  // [Ci, Co, k, k]
    int64_t pad = 1;
    void init(int64_t ci, int64_t co, int64_t k, int64_t pad, Rng& rng);
    nn::NodeRef fwd(nn::Tape& t, const nn::NodeRef& x, bool detached) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Linear {
    nn::Param w, b;
    void init(int64_t out, int64_t in, Rng& rng);
    nn::NodeRef fwd(nn::Tape& t, const nn::NodeRef& x, bool detached) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Norm {
    nn::Param gamma, beta;
    int64_t groups = 1;
    void init(int64_t c, int64_t want_groups);
    nn::NodeRef fwd(nn::Tape& t, const nn::NodeRef& x, bool detached) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ResidualBlock {
    Conv conv1, conv2, skip;
    Norm norm1, norm2;
    bool has_skip = false;
    void init(int64_t ci, int64_t co, int64_t stride, int64_t norm_groups, Rng& rng);
    nn::NodeRef fwd(nn::Tape& t, const nn::NodeRef& x, bool detached) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Extractor {
    Conv stem;
    Norm stem_norm;
    std::vector<ResidualBlock> blocks;
    void visit(const ParamVisitor& fn);
};

struct Encoder {
    ResidualBlock block;
    void visit(const ParamVisitor& fn);
};

struct Classifier {
    Linear fc;  // the latent vector entering fc is the penultimate representation
    void visit(const ParamVisitor& fn);
};

struct Discriminator {
    Linear fc1, fc2;
    void visit(const ParamVisitor& fn);
};

struct Reconstructor {
    ConvT t1, t2;
    Norm norm;
    void visit(const ParamVisitor& fn);
};

enum class Component {
    extractor,
    enc_robust,
    enc_nonrobust,
    enc_domain,
    classifier,
    discriminator,
    reconstructor,
};

constexpr const char* component_names[] = {"extractor",  "enc_robust",    "enc_nonrobust",
                                           "enc_domain", "classifier",    "discriminator",
                                           "reconstructor"};
constexpr size_t component_count = 7;

const char* to_string(Component c);
Component component_from_string(const std::string& s);

/// The three pooled latents produced for one batch.
struct DisentangledTriple {
    Tensor robust;       // [B, latent_dim]
    Tensor non_robust;   // [B, latent_dim]
    Tensor domain;       // [B, latent_dim]
};

/// The full parameter set: extractor, three encoders, classifier,
/// discriminator and reconstructor, plus architecture config. Unit of
/// checkpointing.
struct ModelBundle {
    BackboneConfig config;
    uint32_t format_version = 1;
    std::string variant = "disentangle";

    Extractor extractor;
    Encoder enc_robust, enc_nonrobust, enc_domain;
    Classifier classifier;
    Discriminator discriminator;
    Reconstructor reconstructor;

    static ModelBundle init(const BackboneConfig& cfg, uint64_t seed);

    void visit_component(Component c, const ParamVisitor& fn);
    void visit_all(const std::function<void(Component, const std::string&, nn::Param&)>& fn);
    std::vector<nn::Param*> params_of(Component c);
    std::vector<nn::Param*> params_of(const std::vector<Component>& cs);
    uint64_t value_checksum(Component c);
};

// -- Forward contracts ------------------------------------------------------

/// Intermediate feature map f = extractor(x); x is [B,C,H,W] in [0,1].
nn::NodeRef extract(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& x,
                    bool detach_params = false);

/// Pre-pooled encoder output map, [B, latent_dim, h', w'].
nn::NodeRef encode_map(nn::Tape& t, const Encoder& enc, const nn::NodeRef& f,
                       bool detach_params = false);

/// Pooled latent from one encoder, [B, latent_dim].
nn::NodeRef encode_one(nn::Tape& t, const Encoder& enc, const nn::NodeRef& f,
                       bool detach_params = false);

struct TripleNodes {
    nn::NodeRef robust, non_robust, domain;
};

/// All three pooled latents from a shared feature map.
TripleNodes encode(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& f,
                   bool detach_params = false);

/// Shared classifier logits, [B, num_classes]. The input latent is the
/// penultimate representation used for k-NN evaluation.
nn::NodeRef classify(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& z,
                     bool detach_params = false);

/// Probability that a latent comes from the natural domain, in (0,1). [B,1]
nn::NodeRef discriminate(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& z,
                         bool detach_params = false);

/// Reconstruction of the feature map from the three pre-pooled encoder maps,
/// channel-concatenated in the fixed order [robust, non_robust, domain].
nn::NodeRef reconstruct(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& map_r,
                        const nn::NodeRef& map_nr, const nn::NodeRef& map_ds);

/// Non-robust latent for the adversarial branch with gradient reversal:
/// value equals encode_one(enc_nonrobust, f_adv); the backward pass delivers
/// -lambda-scaled gradients to the non-robust encoder parameters while the
/// extractor (through f_adv) receives the plain gradient.
nn::NodeRef nr_branch_reversed(nn::Tape& t, const ModelBundle& m, const nn::NodeRef& f_adv);

// -- Batched no-grad helpers for evaluation ---------------------------------

Tensor extract_values(const ModelBundle& m, const Tensor& images);
DisentangledTriple encode_values(const ModelBundle& m, const Tensor& images);
Tensor robust_logits(const ModelBundle& m, const Tensor& images);
Tensor robust_latents(const ModelBundle& m, const Tensor& images);   // penultimate features
Tensor domain_scores(const ModelBundle& m, const Tensor& images);    // [B,1] discriminator probs
std::vector<int> predict_labels(const ModelBundle& m, const Tensor& images);

}  // namespace disro::model
