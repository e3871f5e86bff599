#include "disro/model/model.hpp"

#include "disro/core/init.hpp"

#include <algorithm>
#include <cstring>

namespace disro::model {

using namespace disro::nn;

void BackboneConfig::validate() const {
    if (in_channels < 1 || in_height < 1 || in_width < 1)
        throw ModelError("BackboneConfig: invalid input shape");
    if (extractor_blocks < 1) throw ModelError("BackboneConfig: extractor_blocks must be >= 1");
    if (latent_dim < 1) throw ModelError("BackboneConfig: latent_dim must be positive");
    if (num_classes < 2) throw ModelError("BackboneConfig: need at least 2 classes");
    if (grl_lambda <= 0.0) throw ModelError("BackboneConfig: grl_lambda must be > 0");
    if (base_channels < 1) throw ModelError("BackboneConfig: base_channels must be positive");
    if ((in_height >> extractor_blocks) < 1 || (in_width >> extractor_blocks) < 1)
        throw ModelError("BackboneConfig: input too small for extractor depth");
    if (!norm_mean.empty() && static_cast<int64_t>(norm_mean.size()) != in_channels)
        throw ModelError("BackboneConfig: norm_mean size mismatch");
    if (!norm_std.empty() && static_cast<int64_t>(norm_std.size()) != in_channels)
        throw ModelError("BackboneConfig: norm_std size mismatch");
}

int64_t pick_groups(int64_t c, int64_t want) {
    for (int64_t g = std::min(c, want); g > 1; --g)
        if (c % g == 0) return g;
    return 1;
}

const char* to_string(Component c) { return component_names[static_cast<size_t>(c)]; }

Component component_from_string(const std::string& s) {
    for (size_t i = 0; i < component_count; ++i)
        if (s == component_names[i]) return static_cast<Component>(i);
    throw ModelError("unknown component: " + s);
}

// -- Layers ------------------------------------------------------------------

void Conv::init(int64_t co, int64_t ci, int64_t k, int64_t stride_, int64_t pad_, Rng& rng) {
    stride = stride_;
    pad = pad_;
    w = Param(he_normal({co, ci, k, k}, ci * k * k, rng));
    b = Param(Tensor::zeros({co}));
}

NodeRef Conv::fwd(Tape& t, const NodeRef& x, bool detached) const {
    auto& self = const_cast<Conv&>(*this);
    return conv2d(x, t.param(self.w, detached), t.param(self.b, detached), stride, pad);
}

void Conv::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", w);
    fn(prefix + ".bias", b);
}

void ConvT::init(int64_t ci, int64_t co, int64_t k, int64_t pad_, Rng& rng) {
    pad = pad_;
    w = Param(he_normal({ci, co, k, k}, ci * k * k, rng));
    b = Param(Tensor::zeros({co}));
}

NodeRef ConvT::fwd(Tape& t, const NodeRef& x, bool detached) const {
    auto& self = const_cast<ConvT&>(*this);
    return conv_transpose2d(x, t.param(self.w, detached), t.param(self.b, detached), pad);
}

void ConvT::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", w);
    fn(prefix + ".bias", b);
}

void Linear::init(int64_t out, int64_t in, Rng& rng) {
    w = Param(he_normal({out, in}, in, rng));
    b = Param(Tensor::zeros({out}));
}

NodeRef Linear::fwd(Tape& t, const NodeRef& x, bool detached) const {
    auto& self = const_cast<Linear&>(*this);
    return linear(x, t.param(self.w, detached), t.param(self.b, detached));
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", w);
    fn(prefix + ".bias", b);
}

void Norm::init(int64_t c, int64_t want_groups) {
    groups = pick_groups(c, want_groups);
    gamma = Param(Tensor::full({c}, 1.0));
    beta = Param(Tensor::zeros({c}));
}

NodeRef Norm::fwd(Tape& t, const NodeRef& x, bool detached) const {
    auto& self = const_cast<Norm&>(*this);
    return group_norm(x, t.param(self.gamma, detached), t.param(self.beta, detached), groups);
}

void Norm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
}

void ResidualBlock::init(int64_t ci, int64_t co, int64_t stride, int64_t norm_groups, Rng& rng) {
    conv1.init(co, ci, 3, stride, 1, rng);
    norm1.init(co, norm_groups);
    conv2.init(co, co, 3, 1, 1, rng);
    norm2.init(co, norm_groups);
    has_skip = stride != 1 || ci != co;
    if (has_skip) skip.init(co, ci, 1, stride, 0, rng);
}

NodeRef ResidualBlock::fwd(Tape& t, const NodeRef& x, bool detached) const {
    auto h = relu(norm1.fwd(t, conv1.fwd(t, x, detached), detached));
    h = norm2.fwd(t, conv2.fwd(t, h, detached), detached);
    auto s = has_skip ? skip.fwd(t, x, detached) : x;
    return relu(add(h, s));
}

void ResidualBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
    conv1.visit(prefix + ".conv1", fn);
    norm1.visit(prefix + ".norm1", fn);
    conv2.visit(prefix + ".conv2", fn);
    norm2.visit(prefix + ".norm2", fn);
    if (has_skip) skip.visit(prefix + ".skip", fn);
}

void Extractor::visit(const ParamVisitor& fn) {
    stem.visit("stem", fn);
    stem_norm.visit("stem_norm", fn);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i), fn);
}

void Encoder::visit(const ParamVisitor& fn) { block.visit("block", fn); }

void Classifier::visit(const ParamVisitor& fn) { fc.visit("fc", fn); }

void Discriminator::visit(const ParamVisitor& fn) {
    fc1.visit("fc1", fn);
    fc2.visit("fc2", fn);
}

void Reconstructor::visit(const ParamVisitor& fn) {
    t1.visit("t1", fn);
    norm.visit("norm", fn);
    t2.visit("t2", fn);
}

// -- Bundle ------------------------------------------------------------------

ModelBundle ModelBundle::init(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelBundle m;
    m.config = cfg;

    Rng rx(seed, "init/extractor");
    m.extractor.stem.init(cfg.base_channels, cfg.in_channels, 3, 1, 1, rx);
    m.extractor.stem_norm.init(cfg.base_channels, cfg.norm_groups);
    for (int64_t i = 0; i < cfg.extractor_blocks; ++i) {
        ResidualBlock b;
        b.init(cfg.base_channels << i, cfg.base_channels << (i + 1), 2, cfg.norm_groups, rx);
        m.extractor.blocks.push_back(std::move(b));
    }

    const int64_t fc = cfg.feature_channels();
    Rng rr(seed, "init/enc_robust");
    m.enc_robust.block.init(fc, cfg.latent_dim, 1, cfg.norm_groups, rr);
    Rng rn(seed, "init/enc_nonrobust");
    m.enc_nonrobust.block.init(fc, cfg.latent_dim, 1, cfg.norm_groups, rn);
    Rng rd(seed, "init/enc_domain");
    m.enc_domain.block.init(fc, cfg.latent_dim, 1, cfg.norm_groups, rd);

    Rng rc(seed, "init/classifier");
    m.classifier.fc.init(cfg.num_classes, cfg.latent_dim, rc);
    Rng rdisc(seed, "init/discriminator");
    m.discriminator.fc1.init(cfg.disc_hidden, cfg.latent_dim, rdisc);
    m.discriminator.fc2.init(1, cfg.disc_hidden, rdisc);

    Rng rrec(seed, "init/reconstructor");
    const int64_t rh = cfg.recon_hidden_channels();
    m.reconstructor.t1.init(3 * cfg.latent_dim, rh, 3, 1, rrec);
    m.reconstructor.norm.init(rh, cfg.norm_groups);
    m.reconstructor.t2.init(rh, fc, 3, 1, rrec);
    return m;
}

void ModelBundle::visit_component(Component c, const ParamVisitor& fn) {
    switch (c) {
        case Component::extractor: extractor.visit(fn); break;
        case Component::enc_robust: enc_robust.visit(fn); break;
        case Component::enc_nonrobust: enc_nonrobust.visit(fn); break;
        case Component::enc_domain: enc_domain.visit(fn); break;
        case Component::classifier: classifier.visit(fn); break;
        case Component::discriminator: discriminator.visit(fn); break;
        case Component::reconstructor: reconstructor.visit(fn); break;
    }
}

void ModelBundle::visit_all(const std::function<void(Component, const std::string&, nn::Param&)>& fn) {
    for (size_t i = 0; i < component_count; ++i) {
        auto c = static_cast<Component>(i);
        visit_component(c, [&](const std::string& name, nn::Param& p) { fn(c, name, p); });
    }
}

std::vector<Param*> ModelBundle::params_of(Component c) {
    std::vector<Param*> out;
    visit_component(c, [&](const std::string&, Param& p) { out.push_back(&p); });
    return out;
}

std::vector<Param*> ModelBundle::params_of(const std::vector<Component>& cs) {
    std::vector<Param*> out;
    for (auto c : cs) {
        auto v = params_of(c);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

uint64_t ModelBundle::value_checksum(Component c) {
    uint64_t h = 1469598103934665603ull;
    visit_component(c, [&](const std::string&, Param& p) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (int64_t i = 0; i < p.value.numel() * 8; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

// -- Forward -----------------------------------------------------------------

NodeRef extract(Tape& t, const ModelBundle& m, const NodeRef& x, bool detach_params) {
    const auto& cfg = m.config;
    if (x->value.ndim() != 4 || x->value.dim(1) != cfg.in_channels ||
        x->value.dim(2) != cfg.in_height || x->value.dim(3) != cfg.in_width)
        throw ModelError("extract: batch shape " + shape_str(x->value.shape()) +
                         " does not match configured input");
    NodeRef h = x;
    if (!cfg.norm_mean.empty() && !cfg.norm_std.empty()) {
        std::vector<double> scale(cfg.norm_mean.size()), shift(cfg.norm_mean.size());
        for (size_t i = 0; i < scale.size(); ++i) {
            scale[i] = 1.0 / cfg.norm_std[i];
            shift[i] = -cfg.norm_mean[i] / cfg.norm_std[i];
        }
        h = channel_affine(h, scale, shift);
    }
    h = relu(m.extractor.stem_norm.fwd(t, m.extractor.stem.fwd(t, h, detach_params), detach_params));
    for (const auto& b : m.extractor.blocks) h = b.fwd(t, h, detach_params);
    return h;
}

NodeRef encode_map(Tape& t, const Encoder& enc, const NodeRef& f, bool detach_params) {
    return enc.block.fwd(t, f, detach_params);
}

NodeRef encode_one(Tape& t, const Encoder& enc, const NodeRef& f, bool detach_params) {
    return global_avg_pool(encode_map(t, enc, f, detach_params));
}

TripleNodes encode(Tape& t, const ModelBundle& m, const NodeRef& f, bool detach_params) {
    return {encode_one(t, m.enc_robust, f, detach_params),
            encode_one(t, m.enc_nonrobust, f, detach_params),
            encode_one(t, m.enc_domain, f, detach_params)};
}

NodeRef classify(Tape& t, const ModelBundle& m, const NodeRef& z, bool detach_params) {
    if (z->value.ndim() != 2 || z->value.dim(1) != m.config.latent_dim)
        throw ModelError("classify: latent length mismatch");
    return m.classifier.fc.fwd(t, z, detach_params);
}

NodeRef discriminate(Tape& t, const ModelBundle& m, const NodeRef& z, bool detach_params) {
    if (z->value.ndim() != 2 || z->value.dim(1) != m.config.latent_dim)
        throw ModelError("discriminate: latent length mismatch");
    auto h = relu(m.discriminator.fc1.fwd(t, z, detach_params));
    return sigmoid(m.discriminator.fc2.fwd(t, h, detach_params));
}

NodeRef reconstruct(Tape& t, const ModelBundle& m, const NodeRef& map_r, const NodeRef& map_nr,
                    const NodeRef& map_ds) {
    auto cat = concat_channels({map_r, map_nr, map_ds});
    auto h = relu(m.reconstructor.norm.fwd(t, m.reconstructor.t1.fwd(t, cat, false), false));
    return m.reconstructor.t2.fwd(t, h, false);
}

NodeRef nr_branch_reversed(Tape& t, const ModelBundle& m, const NodeRef& f_adv) {
    // Three evaluations of the same encoder function route the gradients:
    //   e_plain:    encoder params constant, f_adv live  -> extractor gets the plain gradient
    //   e_reversed: f_adv constant, params live, via grl -> encoder gets -lambda x gradient
    //   e_const:    fully constant, subtracted so the value stays E(f_adv)
    auto e_plain = encode_one(t, m.enc_nonrobust, f_adv, true);
    auto f_const = detach(f_adv);
    auto e_reversed = grl(encode_one(t, m.enc_nonrobust, f_const, false), m.config.grl_lambda);
    auto e_const = detach(e_reversed);
    return add(e_plain, sub(e_reversed, e_const));
}

// -- Batched no-grad helpers --------------------------------------------------

Tensor extract_values(const ModelBundle& m, const Tensor& images) {
    Tape t(false);
    return extract(t, m, t.leaf(images))->value;
}

DisentangledTriple encode_values(const ModelBundle& m, const Tensor& images) {
    Tape t(false);
    auto f = extract(t, m, t.leaf(images));
    auto z = encode(t, m, f);
    return {z.robust->value, z.non_robust->value, z.domain->value};
}

Tensor robust_logits(const ModelBundle& m, const Tensor& images) {
    Tape t(false);
    auto f = extract(t, m, t.leaf(images));
    auto z = encode_one(t, m.enc_robust, f);
    return classify(t, m, z)->value;
}

Tensor robust_latents(const ModelBundle& m, const Tensor& images) {
    Tape t(false);
    auto f = extract(t, m, t.leaf(images));
    return encode_one(t, m.enc_robust, f)->value;
}

Tensor domain_scores(const ModelBundle& m, const Tensor& images) {
    Tape t(false);
    auto f = extract(t, m, t.leaf(images));
    auto z = encode_one(t, m.enc_domain, f);
    return discriminate(t, m, z)->value;
}

std::vector<int> predict_labels(const ModelBundle& m, const Tensor& images) {
    Tensor logits = robust_logits(m, images);
    const int64_t bs = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(bs));
    for (int64_t i = 0; i < bs; ++i) {
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = static_cast<int>(j);
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

}  // namespace disro::model
