#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "usra/checkpoint.hpp"
#include "usra/digest.hpp"
#include "usra/envsim.hpp"
#include "usra/error.hpp"
#include "usra/gradcheck.hpp"
#include "usra/models.hpp"
#include "usra/rng.hpp"

using namespace usra;

namespace {

Tensor fixed_obs_batch(int batch, uint64_t seed) {
    Tensor out = Tensor::uninit({batch, kObsChannels, kFrameSize, kFrameSize});
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform01();
    return out;
}

Tensor golden_test_obs() {
    PhysState st;
    st.x = 0.25;
    st.v = 0.5;
    st.t = 3;
    const DomainSpec spec = make_domain(Variant::train, 0);
    const Tensor obs = Observation::repeated(std::make_shared<const Tensor>(render(st, spec))).stacked();
    return Tensor({1, kObsChannels, kFrameSize, kFrameSize}, obs.to_vector());
}

// recorded from the first implementation: encoder seed 42, the fixed render
// above (train domain, x=0.25 v=0.5 t=3)
const float kGoldenZ[64] = {
    -0.03335969f, -0.02998634f, -0.04573310f, -0.00606552f, -0.03812549f, 0.04738170f,  -0.05492813f,
    -0.01505075f, -0.02253765f, -0.03856013f, 0.04301036f,  -0.04121985f, 0.01765234f,  -0.01612833f,
    0.02226402f,  0.01014359f,  -0.03612266f, 0.00475882f,  0.00191286f,  0.00573316f,  -0.02745504f,
    -0.02724419f, 0.01177190f,  -0.02274504f, 0.00642879f,  0.00184925f,  0.02487623f,  -0.00723117f,
    0.02322843f,  0.00896096f,  0.00141758f,  0.03114413f,  0.01769822f,  -0.04880939f, -0.03019267f,
    0.06776654f,  0.04505854f,  -0.02898156f, -0.01695570f, 0.02435945f,  0.03825380f,  0.04171182f,
    0.01678483f,  0.02315300f,  0.02553885f,  0.00653898f,  0.00948914f,  0.02172164f,  0.01310937f,
    -0.04181018f, -0.03362668f, 0.01463718f,  -0.01638807f, -0.01346794f, 0.00997057f,  0.00233082f,
    0.00908144f,  0.02248999f,  -0.02915816f, 0.03438434f,  -0.02274419f, 0.01757883f,  -0.00364222f,
    -0.05261366f};

}  // namespace

TEST_CASE("encode: output dim, determinism and the recorded golden vector") {
    ModelBundle bundle = ModelBundle::init(42, QInput::full_z);
    const Tensor obs = golden_test_obs();
    const Tensor z1 = encode_eval(bundle.encoder, obs);
    CHECK(z1.shape() == std::vector<int>{1, kLatentDim});
    const Tensor z2 = encode_eval(bundle.encoder, obs);
    CHECK(max_abs_diff(z1, z2) == 0.0f);
    for (int i = 0; i < kLatentDim; ++i)
        CHECK(z1[static_cast<std::size_t>(i)] == doctest::Approx(kGoldenZ[i]).epsilon(1e-5));
}

TEST_CASE("forward passes satisfy shape contracts across batch sizes") {
    ModelBundle bundle = ModelBundle::init(7, QInput::full_z);
    for (int batch : {1, 16, 128}) {
        const Tensor obs = fixed_obs_batch(batch, 100 + static_cast<uint64_t>(batch));
        const LatentState lat = infer_latent(bundle, obs);
        CHECK(lat.z.shape() == std::vector<int>{batch, 64});
        CHECK(lat.specific.shape() == std::vector<int>{batch, 16});
        CHECK(lat.general_mu.shape() == std::vector<int>{batch, 48});
        CHECK(lat.general_logvar.shape() == std::vector<int>{batch, 48});
        const Tensor q = q_values_eval(bundle, obs);
        CHECK(q.shape() == std::vector<int>{batch, kActionCount});
        CHECK(lat.z.all_finite());
        CHECK(q.all_finite());
    }
}

TEST_CASE("project_split clamps logvar to [-10, 10]") {
    ModelBundle bundle = ModelBundle::init(11, QInput::full_z);
    Graph g;
    // a huge latent drives the pre-clamp linear output far outside the band
    Var z = g.leaf(Tensor({2, kLatentDim}, 1000.0f));
    LatentVars lat = project_split(g, bundle.projection, z, false);
    const Tensor& lv = g.value(lat.general_logvar);
    float lo = 1e9f, hi = -1e9f;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        lo = std::min(lo, lv[i]);
        hi = std::max(hi, lv[i]);
    }
    CHECK(hi <= 10.0f);
    CHECK(lo >= -10.0f);
    CHECK(hi == 10.0f);  // something actually hit the clamp
    CHECK(lo == -10.0f);
}

TEST_CASE("reparam with zero noise returns the mean") {
    Graph g;
    Var mu = g.leaf(Tensor({3, kGeneralDim}, 0.37f));
    Var logvar = g.leaf(Tensor({3, kGeneralDim}, -1.2f));
    Var noise = g.leaf(Tensor({3, kGeneralDim}, 0.0f));
    Var sample = reparam(g, mu, logvar, noise);
    CHECK(max_abs_diff(g.value(sample), g.value(mu)) == 0.0f);
}

TEST_CASE("decode: shape, range and determinism") {
    ModelBundle bundle = ModelBundle::init(13, QInput::full_z);
    Graph g;
    Var spec = g.leaf(Tensor({2, kSpecificDim}, 0.3f));
    Var gen = g.leaf(Tensor({2, kGeneralDim}, -0.2f));
    Var out = decode(g, bundle.decoder, spec, gen, false);
    const Tensor& img = g.value(out);
    CHECK(img.shape() == std::vector<int>{2, kObsChannels, kFrameSize, kFrameSize});
    for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(img[i] >= 0.0f);
        CHECK(img[i] <= 1.0f);
    }
    Graph g2;
    Var out2 = decode(g2, bundle.decoder, g2.leaf(Tensor({2, kSpecificDim}, 0.3f)),
                      g2.leaf(Tensor({2, kGeneralDim}, -0.2f)), false);
    CHECK(max_abs_diff(img, g2.value(out2)) == 0.0f);
}

TEST_CASE("decoder reconstruction gradients pass the finite-difference check") {
    ModelBundle bundle = ModelBundle::init(17, QInput::full_z);
    const Tensor target = fixed_obs_batch(2, 55);
    const Tensor spec_in = Tensor({2, kSpecificDim}, 0.25f);
    const Tensor gen_in = Tensor({2, kGeneralDim}, -0.5f);
    ParamSet params = bundle.decoder_paramset();
    auto loss_fn = [&](Graph& g) {
        Var out = decode(g, bundle.decoder, g.leaf(spec_in), g.leaf(gen_in), true);
        return g.mse_against(out, target);
    };
    const GradCheckReport rep = grad_check("decoder_recon", params, loss_fn, 64, 1e-3f, 1e-3f);
    CHECK(rep.pass);
}

TEST_CASE("q_values: length 5, indexing contract, zeroed head") {
    ModelBundle bundle = ModelBundle::init(19, QInput::full_z);
    Graph g;
    Var z = g.leaf(Tensor({1, kLatentDim}, 0.1f));
    Var q = q_values(g, bundle.q_head, z, false);
    CHECK(g.value(q).shape() == std::vector<int>{1, kActionCount});

    Var picked = g.gather_cols(q, {2});
    CHECK(g.value(picked)[0] == g.value(q)[2]);

    for (Parameter* p : bundle.q_head_paramset()) p->value.fill(0.0f);
    Graph g2;
    Var q2 = q_values(g2, bundle.q_head, g2.leaf(Tensor({1, kLatentDim}, 0.1f)), false);
    for (std::size_t i = 0; i < kActionCount; ++i) CHECK(g2.value(q2)[i] == 0.0f);
}

TEST_CASE("lusr-style bundle routes Q through the domain-general mean") {
    ModelBundle bundle = ModelBundle::init(23, QInput::general_mu);
    CHECK(bundle.q_head.input_dim == kGeneralDim);
    const Tensor obs = fixed_obs_batch(2, 77);
    const Tensor q = q_values_eval(bundle, obs);
    CHECK(q.shape() == std::vector<int>{2, kActionCount});
}

TEST_CASE("ema_update: endpoint and arithmetic cases") {
    Parameter t1("t", Tensor::scalar(0.5f));
    Parameter o1("o", Tensor::scalar(1.0f));
    ParamSet target, online;
    target.add(t1);
    online.add(o1);

    ema_update(target, online, 0.0f);
    CHECK(t1.value[0] == 0.5f);
    ema_update(target, online, 0.01f);
    CHECK(t1.value[0] == doctest::Approx(0.505f).epsilon(1e-7));
    ema_update(target, online, 1.0f);
    CHECK(t1.value[0] == 1.0f);
}

TEST_CASE("ema_update: misaligned sets raise an error naming the mismatch") {
    Parameter t1("target.w", Tensor({2, 2}, 0.0f));
    Parameter o1("online.w", Tensor({3}, 0.0f));
    ParamSet target, online;
    target.add(t1);
    online.add(o1);
    try {
        ema_update(target, online, 0.5f);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("target.w") != std::string::npos);
    }
    CHECK_THROWS_AS(ema_update(target, online, -0.1f), Error);
}

TEST_CASE("ema convexity: every coordinate stays between old target and online") {
    ModelBundle bundle = ModelBundle::init(29, QInput::full_z);
    Rng rng(31);
    ParamSet targets = bundle.target_params();
    ParamSet online = bundle.encoder_online();
    for (Parameter* p : online)
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += rng.uniform(-0.5f, 0.5f);
    std::vector<Tensor> before;
    for (Parameter* p : targets) before.push_back(p->value);
    ema_update(targets, online, 0.25f);
    for (std::size_t pi = 0; pi < targets.size(); ++pi) {
        const Tensor& old_t = before[pi];
        const Tensor& new_t = targets[pi].value;
        const Tensor& on = online[pi].value;
        for (std::size_t i = 0; i < new_t.size(); ++i) {
            const float lo = std::min(old_t[i], on[i]);
            const float hi = std::max(old_t[i], on[i]);
            CHECK(new_t[i] >= lo - 1e-6f);
            CHECK(new_t[i] <= hi + 1e-6f);
        }
    }
}

TEST_CASE("target nets start as copies of the online nets") {
    ModelBundle bundle = ModelBundle::init(37, QInput::full_z);
    ParamSet targets = bundle.target_params();
    ParamSet online = bundle.encoder_online();
    REQUIRE(targets.size() == online.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
        CHECK(max_abs_diff(targets[i].value, online[i].value) == 0.0f);
}

TEST_CASE("checkpoint: bit-identical round trip with metadata") {
    ModelBundle bundle = ModelBundle::init(41, QInput::general_mu);
    CheckpointData data = bundle_to_checkpoint(bundle);
    data.add_meta("env_steps", 1234.0f);
    const std::string path = "test_roundtrip.ckpt";
    save_checkpoint(path, data);
    const CheckpointData loaded = load_checkpoint(path);
    CHECK(loaded.meta_or("env_steps", 0.0f) == 1234.0f);
    ModelBundle restored = bundle_from_checkpoint(loaded);
    CHECK(restored.q_input == QInput::general_mu);
    ParamSet a = bundle.online_params();
    ParamSet b = restored.online_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(max_abs_diff(a[i].value, b[i].value) == 0.0f);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint: exact byte layout of header and entries") {
    CheckpointData data;
    data.add("ab", Tensor({2, 3}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}));
    const std::string path = "test_layout.ckpt";
    save_checkpoint(path, data);
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // magic, version u32le, count u32le
    REQUIRE(b.size() == 5u + 4 + 4 + (2 + 2 + 1 + 2 * 4 + 6 * 4) + 4);
    CHECK(std::string(b.begin(), b.begin() + 5) == "USRA1");
    CHECK((b[5] | (b[6] << 8) | (b[7] << 16) | (b[8] << 24)) == 1);   // version
    CHECK((b[9] | (b[10] << 8) | (b[11] << 16) | (b[12] << 24)) == 1);  // entry count
    // entry: name len u16le, name, rank u8, extents u32le
    CHECK((b[13] | (b[14] << 8)) == 2);
    CHECK(std::string(b.begin() + 15, b.begin() + 17) == "ab");
    CHECK(b[17] == 2);  // rank
    CHECK((b[18] | (b[19] << 8) | (b[20] << 16) | (b[21] << 24)) == 2);
    CHECK((b[22] | (b[23] << 8) | (b[24] << 16) | (b[25] << 24)) == 3);
    float first;
    std::memcpy(&first, b.data() + 26, 4);  // little-endian f32 payload
    CHECK(first == 1.0f);
    // trailing crc32 of everything before it
    const std::size_t n = b.size();
    const uint32_t want = crc32(b.data(), n - 4);
    const uint32_t got = static_cast<uint32_t>(b[n - 4]) | (static_cast<uint32_t>(b[n - 3]) << 8) |
                         (static_cast<uint32_t>(b[n - 2]) << 16) | (static_cast<uint32_t>(b[n - 1]) << 24);
    CHECK(got == want);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint: corruption and truncation are rejected") {
    ModelBundle bundle = ModelBundle::init(43, QInput::full_z);
    const std::string path = "test_corrupt.ckpt";
    save_checkpoint(path, bundle_to_checkpoint(bundle));

    // magic
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(std::string(bytes.data(), 5) == "USRA1");
        // flip one payload byte -> CRC mismatch
        bytes[bytes.size() / 2] ^= 0x40;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        load_checkpoint(path);
        FAIL("expected corrupt-artifact error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::corrupt_artifact);
    }

    save_checkpoint(path, bundle_to_checkpoint(bundle));
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    try {
        load_checkpoint(path);
        FAIL("expected corrupt-artifact error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::corrupt_artifact);
    }
    std::remove(path.c_str());
}

TEST_CASE("all forward passes stay finite on in-range inputs") {
    ModelBundle bundle = ModelBundle::init(47, QInput::full_z);
    const Tensor obs = fixed_obs_batch(4, 99);
    const LatentState lat = infer_latent(bundle, obs);
    CHECK(lat.z.all_finite());
    CHECK(lat.general_logvar.all_finite());
    Graph g;
    Var out = decode(g, bundle.decoder, g.leaf(lat.specific), g.leaf(lat.general_mu), false);
    CHECK(g.value(out).all_finite());
    CHECK(target_q_values_eval(bundle, obs).all_finite());
}
