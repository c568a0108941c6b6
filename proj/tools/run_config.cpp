#include "run_config.hpp"

#include <algorithm>
#include <cmath>

#include "jsa/architecture.hpp"
#include "jsa/errors.hpp"

namespace jsa::cli {

namespace {

const char* const kTasks[] = {"generative-bernoulli", "generative-categorical", "structured", "synthetic"};

bool known_task(const std::string& t) {
  for (const char* k : kTasks) {
    if (t == k) return true;
  }
  return false;
}

}  // namespace

void apply_task_defaults(RunConfig& cfg) {
  if (cfg.task == "generative-bernoulli") {
    cfg.arch = "linear";
    cfg.batch = 50;
    cfg.particles = 2;
    cfg.total_epochs = 1000;
    cfg.stage1_epochs = 600;
  } else if (cfg.task == "generative-categorical") {
    cfg.arch = "categorical-20x10";
    cfg.batch = 200;
    cfg.particles = 20;
    cfg.total_epochs = 500;
    cfg.stage1_epochs = 300;
  } else if (cfg.task == "structured") {
    cfg.arch = "structured-50";
    cfg.batch = 100;
    cfg.particles = 5;
    cfg.total_epochs = 200;
    cfg.stage1_epochs = 60;
  } else if (cfg.task == "synthetic") {
    cfg.arch = cfg.synthetic_arch;
    cfg.batch = 50;
    cfg.particles = 2;
    cfg.total_epochs = 100;
    cfg.stage1_epochs = 0;
  }
}

void validate(const RunConfig& cfg) {
  if (!known_task(cfg.task)) throw config_error("unknown task '" + cfg.task + "'");
  if (cfg.algo != "jsa" && cfg.algo != "rws") throw config_error("--algo must be jsa or rws");
  if (cfg.schedule != "constant" && cfg.schedule != "rm") throw config_error("--schedule must be constant or rm");
  if (cfg.binarize != "threshold" && cfg.binarize != "standard") {
    throw config_error("--binarize must be threshold or standard");
  }
  if (cfg.algo == "rws" && cfg.particles < 2) throw config_error("RWS needs --particles >= 2");
  if (cfg.valid_samples < 1 || cfg.test_samples < 1) throw config_error("sample counts must be at least 1");
  if (cfg.arch.empty()) throw config_error("no architecture given");
  jsa_config(cfg).validate();
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"task", c.task},
          {"arch", c.arch},
          {"algo", c.algo},
          {"particles", c.particles},
          {"batch", c.batch},
          {"lr", c.lr},
          {"total_epochs", c.total_epochs},
          {"stage1_epochs", c.stage1_epochs},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"schedule", c.schedule},
          {"rm_t0", c.rm_t0},
          {"rm_alpha", c.rm_alpha},
          {"max_norm", c.max_norm},
          {"data_root", c.data_root},
          {"binarize", c.binarize},
          {"n_train", c.n_train},
          {"n_valid", c.n_valid},
          {"synthetic_arch", c.synthetic_arch},
          {"synthetic_n", c.synthetic_n},
          {"synthetic_seed", c.synthetic_seed},
          {"valid_samples", c.valid_samples},
          {"test_samples", c.test_samples},
          {"train_eval_size", c.train_eval_size},
          {"record_time", c.record_time},
          {"out", c.out}};
}

RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw config_error("unknown config key '" + it.key() + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw config_error(std::string("config key '") + key + "' has the wrong type");
    }
  };
  get("task", c.task);
  get("arch", c.arch);
  get("algo", c.algo);
  get("particles", c.particles);
  get("batch", c.batch);
  get("lr", c.lr);
  get("total_epochs", c.total_epochs);
  get("stage1_epochs", c.stage1_epochs);
  get("eval_every", c.eval_every);
  get("seed", c.seed);
  get("schedule", c.schedule);
  get("rm_t0", c.rm_t0);
  get("rm_alpha", c.rm_alpha);
  get("max_norm", c.max_norm);
  get("data_root", c.data_root);
  get("binarize", c.binarize);
  get("n_train", c.n_train);
  get("n_valid", c.n_valid);
  get("synthetic_arch", c.synthetic_arch);
  get("synthetic_n", c.synthetic_n);
  get("synthetic_seed", c.synthetic_seed);
  get("valid_samples", c.valid_samples);
  get("test_samples", c.test_samples);
  get("train_eval_size", c.train_eval_size);
  get("record_time", c.record_time);
  get("out", c.out);
  return c;
}

JsaConfig jsa_config(const RunConfig& cfg) {
  JsaConfig j;
  j.particle_number = cfg.particles;
  j.minibatch_size = cfg.batch;
  j.stage1_epochs = cfg.stage1_epochs;
  j.total_epochs = cfg.total_epochs;
  j.lr = cfg.lr;
  j.seed = cfg.seed;
  j.eval_every = cfg.eval_every;
  j.schedule = cfg.schedule == "rm" ? Schedule::RobbinsMonro : Schedule::Constant;
  j.rm_t0 = cfg.rm_t0;
  j.rm_alpha = cfg.rm_alpha;
  j.max_norm = cfg.max_norm;
  return j;
}

Algorithm algorithm(const RunConfig& cfg) { return cfg.algo == "rws" ? Algorithm::Rws : Algorithm::Jsa; }

TaskData load_task_data(const RunConfig& cfg) {
  TaskData d;
  if (cfg.task == "synthetic") {
    // One draw from one generating model, cut into train / valid / test.
    const std::size_t n_hold = std::max<std::size_t>(cfg.synthetic_n / 5, 1);
    const Dataset all =
        synthetic_dataset({cfg.synthetic_arch, cfg.synthetic_n + 2 * n_hold, 1.5}, cfg.synthetic_seed).data;
    auto slice = [&](std::size_t begin, std::size_t end, Split split) {
      const std::size_t w = all.width(), cw = all.contexts.empty() ? 0 : all.contexts.cols();
      DenseArray items = DenseArray::matrix(end - begin, w);
      DenseArray ctx = cw ? DenseArray::matrix(end - begin, cw) : DenseArray{};
      for (std::size_t i = begin; i < end; ++i) {
        std::copy(all.items.row(i).begin(), all.items.row(i).end(), items.row(i - begin).begin());
        if (cw) std::copy(all.contexts.row(i).begin(), all.contexts.row(i).end(), ctx.row(i - begin).begin());
      }
      return make_dataset(std::move(items), std::move(ctx), split);
    };
    d.train = slice(0, cfg.synthetic_n, Split::Train);
    d.valid = slice(cfg.synthetic_n, cfg.synthetic_n + n_hold, Split::Valid);
    d.test = slice(cfg.synthetic_n + n_hold, cfg.synthetic_n + 2 * n_hold, Split::Test);
    return d;
  }
  MnistOptions opt;
  opt.root = cfg.data_root;
  opt.mode = cfg.binarize == "standard" ? BinarizeMode::FixedStandard : BinarizeMode::Threshold;
  if (cfg.n_train) opt.n_train = cfg.n_train;
  if (cfg.n_valid) opt.n_valid = cfg.n_valid;
  MnistSplits s = load_mnist(opt);
  d.test_is_valid = s.test_is_valid;
  if (cfg.task == "structured") {
    d.train = split_halves(s.train);
    d.valid = split_halves(s.valid);
    d.test = split_halves(s.test);
  } else {
    d.train = std::move(s.train);
    d.valid = std::move(s.valid);
    d.test = std::move(s.test);
  }
  return d;
}

void check_compatible(const RunConfig& cfg, const ModelPair& pair) {
  const auto& top = pair.gen.latents.back();
  auto fail = [&](const std::string& why) {
    throw config_error("architecture '" + pair.architecture + "' does not fit task " + cfg.task + ": " + why);
  };
  if (cfg.task == "generative-bernoulli" || cfg.task == "generative-categorical") {
    if (pair.gen.obs_width != 784 || pair.gen.context_width != 0) fail("needs 784 observed units and no context");
    const bool categorical = top.kind == LatentKind::Categorical;
    if ((cfg.task == "generative-categorical") != categorical) {
      fail(categorical ? "latents are categorical" : "latents are Bernoulli");
    }
  } else if (cfg.task == "structured") {
    if (pair.gen.obs_width != 392 || pair.gen.context_width != 392) fail("needs 392 observed and 392 context units");
  } else if (cfg.task == "synthetic") {
    const ModelPair ref = build_architecture(cfg.synthetic_arch, 0);
    if (pair.gen.obs_width != ref.gen.obs_width || pair.gen.context_width != ref.gen.context_width) {
      fail("observed/context widths differ from the synthetic generator");
    }
  }
}

}  // namespace jsa::cli
