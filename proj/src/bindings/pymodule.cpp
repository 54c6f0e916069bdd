// Python bindings for the usra core: environment, augmentations, models,
// losses, training phases and the evaluation harness.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "usra/augment.hpp"
#include "usra/checkpoint.hpp"
#include "usra/config.hpp"
#include "usra/envsim.hpp"
#include "usra/error.hpp"
#include "usra/evalharness.hpp"
#include "usra/gradsuite.hpp"
#include "usra/losses.hpp"
#include "usra/trainer.hpp"

namespace py = pybind11;
using namespace usra;

namespace {

py::array_t<float> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> arr(shape);
    std::copy_n(t.data(), t.size(), arr.mutable_data());
    return arr;
}

Tensor array_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    std::vector<float> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

PYBIND11_MODULE(_usra, m) {
    m.doc() = "StriderWorld pixel-control environment and the usra/lusr/svea training stack";

    py::register_exception<Error>(m, "UsraError");

    py::enum_<Variant>(m, "Variant")
        .value("train", Variant::train)
        .value("color_easy", Variant::color_easy)
        .value("color_hard", Variant::color_hard)
        .value("video_easy", Variant::video_easy)
        .value("video_hard", Variant::video_hard);

    py::class_<DomainSpec>(m, "DomainSpec")
        .def_readonly("variant", &DomainSpec::variant)
        .def_readonly("background_color", &DomainSpec::background_color)
        .def_readonly("platform_color", &DomainSpec::platform_color)
        .def_readonly("agent_color", &DomainSpec::agent_color)
        .def_readonly("pattern_seed", &DomainSpec::pattern_seed)
        .def_readonly("pattern_speed", &DomainSpec::pattern_speed);

    py::class_<PhysState>(m, "PhysState")
        .def_readonly("x", &PhysState::x)
        .def_readonly("v", &PhysState::v)
        .def_readonly("t", &PhysState::t);

    m.def("make_domain", &make_domain, py::arg("variant"), py::arg("seed"));
    m.def(
        "render",
        [](const PhysState& s, const DomainSpec& spec) { return tensor_to_array(render(s, spec)); },
        py::arg("state"), py::arg("spec"));

    py::class_<StriderEnv>(m, "StriderEnv")
        .def(py::init<>())
        .def("reset", &StriderEnv::reset, py::arg("spec"), py::arg("seed"))
        .def(
            "step",
            [](StriderEnv& env, int action) {
                const StepResult r = env.step(ActionId::from_index(action));
                return py::make_tuple(tensor_to_array(r.obs.stacked()), r.reward, r.done);
            },
            py::arg("action"))
        .def("observation", [](const StriderEnv& env) { return tensor_to_array(env.observation().stacked()); })
        .def_property_readonly("done", &StriderEnv::done)
        .def_property_readonly("state", &StriderEnv::state);

    m.def(
        "random_conv",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& obs, uint64_t seed) {
            return tensor_to_array(random_conv(array_to_tensor(obs), seed));
        },
        py::arg("obs"), py::arg("seed"));
    m.def(
        "color_jitter",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& obs, uint64_t seed) {
            return tensor_to_array(color_jitter(array_to_tensor(obs), seed));
        },
        py::arg("obs"), py::arg("seed"));
    m.def(
        "conv2d",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& k, int stride) {
            return tensor_to_array(conv2d_eval(array_to_tensor(x), array_to_tensor(k), nullptr, stride));
        },
        py::arg("x"), py::arg("kernel"), py::arg("stride") = 1);

    py::class_<ModelBundle>(m, "ModelBundle")
        .def_static(
            "init",
            [](uint64_t seed, bool general_mu_q) {
                return ModelBundle::init(seed, general_mu_q ? QInput::general_mu : QInput::full_z);
            },
            py::arg("seed"), py::arg("general_mu_q") = false)
        .def("encode",
             [](const ModelBundle& b, const py::array_t<float, py::array::c_style | py::array::forcecast>& obs) {
                 return tensor_to_array(encode_eval(b.encoder, array_to_tensor(obs)));
             })
        .def("latent",
             [](const ModelBundle& b, const py::array_t<float, py::array::c_style | py::array::forcecast>& obs) {
                 const LatentState s = infer_latent(b, array_to_tensor(obs));
                 return py::make_tuple(tensor_to_array(s.z), tensor_to_array(s.specific),
                                       tensor_to_array(s.general_mu), tensor_to_array(s.general_logvar));
             })
        .def("q_values",
             [](const ModelBundle& b, const py::array_t<float, py::array::c_style | py::array::forcecast>& obs) {
                 return tensor_to_array(q_values_eval(b, array_to_tensor(obs)));
             });

    m.def(
        "load_bundle",
        [](const std::string& path) { return bundle_from_checkpoint(load_checkpoint(path)); },
        py::arg("path"));
    m.def(
        "save_bundle",
        [](ModelBundle& bundle, const std::string& path) { save_checkpoint(path, bundle_to_checkpoint(bundle)); },
        py::arg("bundle"), py::arg("path"));

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("gamma", &TrainConfig::gamma)
        .def_readwrite("zeta", &TrainConfig::zeta)
        .def_readwrite("beta1", &TrainConfig::beta1)
        .def_readwrite("beta2", &TrainConfig::beta2)
        .def_readwrite("kl_weight", &TrainConfig::kl_weight)
        .def_readwrite("lr_base", &TrainConfig::lr_base)
        .def_readwrite("encoder_lr_divisor", &TrainConfig::encoder_lr_divisor)
        .def_readwrite("pretrain_frames", &TrainConfig::pretrain_frames)
        .def_readwrite("pretrain_epochs", &TrainConfig::pretrain_epochs)
        .def_readwrite("batch_lusr", &TrainConfig::batch_lusr)
        .def_readwrite("batch_svea", &TrainConfig::batch_svea)
        .def_readwrite("episodes", &TrainConfig::episodes)
        .def_readwrite("episode_length", &TrainConfig::episode_length)
        .def_readwrite("replay_capacity", &TrainConfig::replay_capacity)
        .def_readwrite("warmup_steps", &TrainConfig::warmup_steps)
        .def_readwrite("update_every", &TrainConfig::update_every)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_property(
            "method", [](const TrainConfig& c) { return std::string(method_name(c.method)); },
            [](TrainConfig& c, const std::string& m) { c.method = method_from_name(m); })
        .def_property(
            "aug_kind", [](const TrainConfig& c) { return std::string(aug_kind_name(c.aug_kind)); },
            [](TrainConfig& c, const std::string& a) { c.aug_kind = aug_kind_from_name(a); })
        .def("validate", &TrainConfig::validate);

    m.def("parse_config", &parse_config_text, py::arg("text"), py::arg("source_name") = "<python>");

    m.def(
        "collect_random",
        [](const DomainSpec& spec, int n_frames, uint64_t seed) {
            const FrameDataset ds = collect_random(spec, n_frames, seed);
            return py::make_tuple(static_cast<int>(ds.observations.size()),
                                  static_cast<int>(ds.transitions.size()), ds.episode_ids);
        },
        py::arg("spec"), py::arg("n_frames"), py::arg("seed"));

    m.def(
        "pretrain_phase1",
        [](const TrainConfig& cfg) {
            const FrameDataset ds =
                collect_random(make_domain(Variant::train, cfg.seed), cfg.pretrain_frames, cfg.seed);
            PretrainResult res = pretrain_phase1(ds, cfg);
            py::list log;
            for (const MetricsRow& r : res.log)
                log.append(py::make_tuple(r.episode, r.loss_forward, r.loss_reverse, r.loss_svea));
            return py::make_tuple(std::move(res.bundle), log);
        },
        py::arg("config"));

    m.def(
        "finetune_phase2",
        [](ModelBundle& bundle, const TrainConfig& cfg) {
            TrainResult res = finetune_phase2(bundle, cfg);
            py::list log;
            for (const MetricsRow& r : res.log) log.append(py::make_tuple(r.episode, r.train_return, r.epsilon));
            return log;
        },
        py::arg("bundle"), py::arg("config"));

    m.def(
        "evaluate",
        [](const ModelBundle& bundle, Variant variant, int episodes, uint64_t seed) {
            return evaluate(bundle, variant, episodes, seed);
        },
        py::arg("bundle"), py::arg("variant"), py::arg("episodes") = kDefaultEvalEpisodes, py::arg("seed") = 0);

    m.def("relative_improvement", &relative_improvement, py::arg("a"), py::arg("b"));

    m.def(
        "grad_suite",
        [](uint64_t seed, int probes) {
            const GradSuiteReport r = run_grad_suite(seed, probes);
            py::list entries;
            for (const GradSuiteEntry& e : r.entries)
                entries.append(py::make_tuple(e.loss, e.network, e.max_rel_err, e.pass));
            return py::make_tuple(r.pass, entries);
        },
        py::arg("seed") = 42, py::arg("probes") = 16);

    m.attr("FRAME_SIZE") = kFrameSize;
    m.attr("ACTION_COUNT") = kActionCount;
    m.attr("EPISODE_LENGTH") = kEpisodeLength;
    m.attr("OBS_CHANNELS") = kObsChannels;
}
