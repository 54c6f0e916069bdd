#include "usra/models.hpp"

#include <cmath>

#include "usra/envsim.hpp"
#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

namespace {

void init_uniform(Tensor& t, int fan_in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

ConvLayer make_conv(const std::string& name, int c_in, int c_out, Rng& rng) {
    ConvLayer l;
    l.kernel = Parameter(name + ".k", Tensor({c_out, c_in, 3, 3}));
    l.bias = Parameter(name + ".b", Tensor({c_out}));
    init_uniform(l.kernel.value, c_in * 9, rng);
    return l;
}

DenseLayer make_dense(const std::string& name, int in, int out, Rng& rng) {
    DenseLayer l;
    l.weight = Parameter(name + ".w", Tensor({in, out}));
    l.bias = Parameter(name + ".b", Tensor({out}));
    init_uniform(l.weight.value, in, rng);
    return l;
}

EncoderNet make_encoder(const std::string& prefix, Rng& rng) {
    EncoderNet e;
    e.c1 = make_conv(prefix + ".c1", kObsChannels, 32, rng);
    e.c2 = make_conv(prefix + ".c2", 32, 32, rng);
    e.c3 = make_conv(prefix + ".c3", 32, 64, rng);
    e.c4 = make_conv(prefix + ".c4", 64, 64, rng);
    e.fc = make_dense(prefix + ".fc", 64 * 3 * 3, kLatentDim, rng);
    return e;
}

QHeadNet make_q_head(const std::string& prefix, int input_dim, Rng& rng) {
    QHeadNet q;
    q.input_dim = input_dim;
    q.hidden = make_dense(prefix + ".h1", input_dim, kQHiddenDim, rng);
    q.out = make_dense(prefix + ".out", kQHiddenDim, kActionCount, rng);
    return q;
}

// a stable sugar for binding either trainable params or frozen values
struct Bind {
    Graph& g;
    bool trainable;
    Var operator()(const Parameter& p) const {
        return trainable ? g.param(const_cast<Parameter&>(p)) : g.leaf(p.value);
    }
};

void add_conv(ParamSet& ps, ConvLayer& l) {
    ps.add(l.kernel);
    ps.add(l.bias);
}
void add_dense(ParamSet& ps, DenseLayer& l) {
    ps.add(l.weight);
    ps.add(l.bias);
}
void add_encoder(ParamSet& ps, EncoderNet& e) {
    add_conv(ps, e.c1);
    add_conv(ps, e.c2);
    add_conv(ps, e.c3);
    add_conv(ps, e.c4);
    add_dense(ps, e.fc);
}
void add_q_head(ParamSet& ps, QHeadNet& q) {
    add_dense(ps, q.hidden);
    add_dense(ps, q.out);
}

void copy_values(ParamSet dst, ParamSet src) {
    if (dst.size() != src.size()) raise(ErrorKind::logic, "net copy: parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = src[i].value;
}

}  // namespace

ModelBundle ModelBundle::init(uint64_t seed, QInput q_input) {
    ModelBundle b;
    b.q_input = q_input;
    const int q_dim = q_input == QInput::full_z ? kLatentDim : kGeneralDim;
    Rng rng(derive_seed(seed, 0x10de1));
    b.encoder = make_encoder("encoder", rng);
    b.projection.specific = make_dense("projection.specific", kLatentDim, kSpecificDim, rng);
    b.projection.general_mu = make_dense("projection.mu", kLatentDim, kGeneralDim, rng);
    b.projection.general_logvar = make_dense("projection.logvar", kLatentDim, kGeneralDim, rng);
    b.decoder.fc = make_dense("decoder.fc", kSpecificDim + kGeneralDim, 64 * 3 * 3, rng);
    b.decoder.c1 = make_conv("decoder.c1", 64, 64, rng);
    b.decoder.c2 = make_conv("decoder.c2", 64, 32, rng);
    b.decoder.c3 = make_conv("decoder.c3", 32, 32, rng);
    b.decoder.c4 = make_conv("decoder.c4", 32, kObsChannels, rng);
    b.q_head = make_q_head("q_head", q_dim, rng);
    b.target_encoder = make_encoder("target_encoder", rng);
    b.target_q_head = make_q_head("target_q_head", q_dim, rng);
    b.sync_targets();
    return b;
}

void ModelBundle::sync_targets() {
    copy_values(target_params(), [this] {
        ParamSet ps;
        add_encoder(ps, encoder);
        add_q_head(ps, q_head);
        return ps;
    }());
}

ParamSet ModelBundle::online_params() {
    ParamSet ps;
    add_encoder(ps, encoder);
    add_dense(ps, projection.specific);
    add_dense(ps, projection.general_mu);
    add_dense(ps, projection.general_logvar);
    add_dense(ps, decoder.fc);
    add_conv(ps, decoder.c1);
    add_conv(ps, decoder.c2);
    add_conv(ps, decoder.c3);
    add_conv(ps, decoder.c4);
    add_q_head(ps, q_head);
    return ps;
}

ParamSet ModelBundle::target_params() {
    ParamSet ps;
    add_encoder(ps, target_encoder);
    add_q_head(ps, target_q_head);
    return ps;
}

ParamSet ModelBundle::encoder_online() {
    ParamSet ps;
    add_encoder(ps, encoder);
    add_q_head(ps, q_head);
    return ps;
}

ParamSet ModelBundle::q_head_online() {
    ParamSet ps;
    add_q_head(ps, q_head);
    return ps;
}

ParamSet ModelBundle::encoder_paramset() {
    ParamSet ps;
    add_encoder(ps, encoder);
    return ps;
}

ParamSet ModelBundle::projection_paramset() {
    ParamSet ps;
    add_dense(ps, projection.specific);
    add_dense(ps, projection.general_mu);
    add_dense(ps, projection.general_logvar);
    return ps;
}

ParamSet ModelBundle::decoder_paramset() {
    ParamSet ps;
    add_dense(ps, decoder.fc);
    add_conv(ps, decoder.c1);
    add_conv(ps, decoder.c2);
    add_conv(ps, decoder.c3);
    add_conv(ps, decoder.c4);
    return ps;
}

ParamSet ModelBundle::q_head_paramset() {
    ParamSet ps;
    add_q_head(ps, q_head);
    return ps;
}

Var encode(Graph& g, const EncoderNet& net, Var obs, bool trainable) {
    Bind bind{g, trainable};
    Var h = obs;
    if (g.value(h).rank() == 3) {
        const auto& s = g.value(h).shape();
        h = g.reshape(h, {1, s[0], s[1], s[2]});
    }
    h = g.conv2d(h, bind(net.c1.kernel), bind(net.c1.bias), 2, Graph::Act::tanh_act);
    h = g.conv2d(h, bind(net.c2.kernel), bind(net.c2.bias), 2, Graph::Act::tanh_act);
    h = g.conv2d(h, bind(net.c3.kernel), bind(net.c3.bias), 2, Graph::Act::tanh_act);
    h = g.conv2d(h, bind(net.c4.kernel), bind(net.c4.bias), 2, Graph::Act::tanh_act);
    const int b = g.value(h).dim(0);
    h = g.reshape(h, {b, 64 * 3 * 3});
    return g.dense(h, bind(net.fc.weight), bind(net.fc.bias));
}

LatentVars project_split(Graph& g, const ProjectionNet& net, Var z, bool trainable) {
    Bind bind{g, trainable};
    LatentVars out;
    out.specific = g.dense(z, bind(net.specific.weight), bind(net.specific.bias));
    out.general_mu = g.dense(z, bind(net.general_mu.weight), bind(net.general_mu.bias));
    out.general_logvar =
        g.clamp(g.dense(z, bind(net.general_logvar.weight), bind(net.general_logvar.bias)), -kLogvarClamp, kLogvarClamp);
    return out;
}

Var decode(Graph& g, const DecoderNet& net, Var specific, Var general, bool trainable) {
    Bind bind{g, trainable};
    Var h = g.concat_cols(specific, general);
    h = g.tanh(g.dense(h, bind(net.fc.weight), bind(net.fc.bias)));
    const int b = g.value(h).dim(0);
    h = g.reshape(h, {b, 64, 3, 3});
    h = g.conv2d(g.upsample2(h), bind(net.c1.kernel), bind(net.c1.bias), 1, Graph::Act::tanh_act);
    h = g.conv2d(g.upsample2(h), bind(net.c2.kernel), bind(net.c2.bias), 1, Graph::Act::tanh_act);
    h = g.conv2d(g.upsample2(h), bind(net.c3.kernel), bind(net.c3.bias), 1, Graph::Act::tanh_act);
    h = g.conv2d(g.upsample2(h), bind(net.c4.kernel), bind(net.c4.bias), 1);
    return g.sigmoid(h);
}

Var q_values(Graph& g, const QHeadNet& net, Var input, bool trainable) {
    Bind bind{g, trainable};
    Var h = g.tanh(g.dense(input, bind(net.hidden.weight), bind(net.hidden.bias)));
    return g.dense(h, bind(net.out.weight), bind(net.out.bias));
}

Var reparam(Graph& g, Var mu, Var logvar, Var noise) {
    return g.add(mu, g.mul(noise, g.exp(g.scale(logvar, 0.5f))));
}

Tensor encode_eval(const EncoderNet& net, const Tensor& obs_batch) {
    Graph g;
    return g.value(encode(g, net, g.leaf(obs_batch), false));
}

LatentState infer_latent(const ModelBundle& bundle, const Tensor& obs_batch) {
    Graph g;
    Var z = encode(g, bundle.encoder, g.leaf(obs_batch), false);
    LatentVars lat = project_split(g, bundle.projection, z, false);
    return LatentState{g.value(z), g.value(lat.specific), g.value(lat.general_mu), g.value(lat.general_logvar)};
}

namespace {
Tensor q_eval_path(const ModelBundle& bundle, const EncoderNet& enc, const QHeadNet& qh, const Tensor& obs_batch) {
    Graph g;
    Var z = encode(g, enc, g.leaf(obs_batch), false);
    Var qin = z;
    if (bundle.q_input == QInput::general_mu) {
        LatentVars lat = project_split(g, bundle.projection, z, false);
        qin = lat.general_mu;
    }
    return g.value(q_values(g, qh, qin, false));
}
}  // namespace

Tensor q_values_eval(const ModelBundle& bundle, const Tensor& obs_batch) {
    return q_eval_path(bundle, bundle.encoder, bundle.q_head, obs_batch);
}

Tensor target_q_values_eval(const ModelBundle& bundle, const Tensor& obs_batch) {
    return q_eval_path(bundle, bundle.target_encoder, bundle.target_q_head, obs_batch);
}

void ema_update(ParamSet& target, const ParamSet& online, float zeta) {
    if (zeta < 0.0f || zeta > 1.0f) raise(ErrorKind::logic, "ema zeta must be in [0,1]");
    if (target.size() != online.size())
        raise(ErrorKind::logic, "ema: set sizes differ (" + std::to_string(target.size()) + " vs " +
                                    std::to_string(online.size()) + ")");
    for (std::size_t i = 0; i < target.size(); ++i) {
        Parameter& t = target[i];
        const Parameter& o = online[i];
        if (!t.value.same_shape(o.value))
            raise(ErrorKind::logic, "ema: shape mismatch at '" + t.name + "' vs '" + o.name + "' (" +
                                        t.value.shape_str() + " vs " + o.value.shape_str() + ")");
        for (std::size_t j = 0; j < t.value.size(); ++j)
            t.value[j] = (1.0f - zeta) * t.value[j] + zeta * o.value[j];
    }
}

}  // namespace usra
