#include "fedacross/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace fedacross {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void bad_value(const std::string& value, const char* expected) {
  throw Error(ErrorCode::Config, "'" + value + "' is not " + expected);
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size() || v.empty()) bad_value(v, "a non-negative integer");
  return out;
}

std::uint32_t parse_u32(const std::string& v) {
  const std::uint64_t x = parse_u64(v);
  if (x > std::numeric_limits<std::uint32_t>::max()) bad_value(v, "a 32-bit integer");
  return static_cast<std::uint32_t>(x);
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size() || v.empty()) bad_value(v, "a number");
  return out;
}

bool parse_bool(const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(v, "a boolean");
}

template <class T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<T>(parse_u64(item)));
  }
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

DomainConfig default_target(std::uint32_t index) {
  DomainConfig d;
  d.brightness_shift = 0.15;
  d.contrast_scale = 0.75;
  d.noise_std = 0.08;
  d.rotation_deg = 12.0;
  d.seed = 101 + index;
  return d;
}

ClientSpec& client_slot(ExperimentConfig& c, std::uint32_t index) {
  auto it = c.clients.find(index);
  if (it == c.clients.end())
    it = c.clients.emplace(index, ClientSpec{"client" + std::to_string(index), default_target(index)}).first;
  return it->second;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FA_FIELD(name, member, parse, format)                                            \
  Field {                                                                                \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse(v); },        \
        [](const ExperimentConfig& c) { return format(c.member); }                       \
  }

std::string fmt_u(std::uint64_t x) { return std::to_string(x); }

void add_train_fields(std::vector<Field>& f, const std::string& section, TrainConfig ExperimentConfig::*member) {
  auto add = [&](const std::string& key, auto setter, auto getter) {
    f.push_back({section + "." + key,
                 [member, setter](ExperimentConfig& c, const std::string& v) { setter(c.*member, v); },
                 [member, getter](const ExperimentConfig& c) { return getter(c.*member); }});
  };
  add("lr", [](TrainConfig& t, const std::string& v) { t.lr = parse_double(v); },
      [](const TrainConfig& t) { return fmt(t.lr); });
  add("momentum", [](TrainConfig& t, const std::string& v) { t.momentum = parse_double(v); },
      [](const TrainConfig& t) { return fmt(t.momentum); });
  add("weight_decay", [](TrainConfig& t, const std::string& v) { t.weight_decay = parse_double(v); },
      [](const TrainConfig& t) { return fmt(t.weight_decay); });
  add("batch_size", [](TrainConfig& t, const std::string& v) { t.batch_size = parse_u64(v); },
      [](const TrainConfig& t) { return fmt_u(t.batch_size); });
  add("epochs", [](TrainConfig& t, const std::string& v) { t.epochs = parse_u64(v); },
      [](const TrainConfig& t) { return fmt_u(t.epochs); });
  add("milestones", [](TrainConfig& t, const std::string& v) { t.schedule.milestones = parse_list<std::size_t>(v); },
      [](const TrainConfig& t) { return fmt_list(t.schedule.milestones); });
  add("lr_factor", [](TrainConfig& t, const std::string& v) { t.schedule.factor = parse_double(v); },
      [](const TrainConfig& t) { return fmt(t.schedule.factor); });
  add("label_smoothing", [](TrainConfig& t, const std::string& v) { t.label_smoothing = parse_double(v); },
      [](const TrainConfig& t) { return fmt(t.label_smoothing); });
  add("patience", [](TrainConfig& t, const std::string& v) { t.patience = parse_u64(v); },
      [](const TrainConfig& t) { return fmt_u(t.patience); });
  add("augment", [](TrainConfig& t, const std::string& v) { t.augment = parse_bool(v); },
      [](const TrainConfig& t) { return fmt_bool(t.augment); });
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        FA_FIELD("experiment.seed", seed, parse_u64, fmt_u),
        FA_FIELD("experiment.repetitions", repetitions, parse_u32, fmt_u),
        FA_FIELD("experiment.rounds", rounds, parse_u32, fmt_u),
        FA_FIELD("experiment.k", k, parse_u32, fmt_u),
        FA_FIELD("experiment.k_values", k_values, parse_list<std::uint32_t>, fmt_list),
        FA_FIELD("experiment.class_subset", class_subset, parse_u32, fmt_u),
        FA_FIELD("experiment.strategy", strategy, parse_strategy, to_string),
        FA_FIELD("experiment.sampling_enabled", sampling_enabled, parse_bool, fmt_bool),
        FA_FIELD("experiment.upstream", upstream, parse_bool, fmt_bool),
        FA_FIELD("experiment.redraw_support", redraw_support, parse_bool, fmt_bool),
        FA_FIELD("experiment.transport", transport.kind, parse_transport, to_string),
        FA_FIELD("experiment.host", transport.host, std::string, std::string),
        Field{"experiment.port",
              [](ExperimentConfig& c, const std::string& v) {
                const auto p = parse_u64(v);
                if (p > 65535) bad_value(v, "a port number");
                c.transport.port = static_cast<std::uint16_t>(p);
              },
              [](const ExperimentConfig& c) { return fmt_u(c.transport.port); }},
        Field{"experiment.timeout_ms",
              [](ExperimentConfig& c, const std::string& v) { c.transport.timeout = Timeout(parse_u64(v)); },
              [](const ExperimentConfig& c) { return fmt_u(static_cast<std::uint64_t>(c.transport.timeout.count())); }},
        FA_FIELD("experiment.output_dir", output_dir, std::string, std::string),
        Field{"experiment.clients",
              [](ExperimentConfig& c, const std::string& v) {
                const std::uint32_t n = parse_u32(v);
                for (auto it = c.clients.begin(); it != c.clients.end();)
                  it = it->first >= n ? c.clients.erase(it) : std::next(it);
                for (std::uint32_t i = 0; i < n; ++i) client_slot(c, i);
              },
              [](const ExperimentConfig& c) { return fmt_u(c.clients.size()); }},

        FA_FIELD("data.classes", base.class_count, parse_u32, fmt_u),
        FA_FIELD("data.height", base.height, parse_u32, fmt_u),
        FA_FIELD("data.width", base.width, parse_u32, fmt_u),
        FA_FIELD("data.glyph_seed", base.glyph_seed, parse_u64, fmt_u),
        FA_FIELD("data.variation_seed", base.variation_seed, parse_u64, fmt_u),
        FA_FIELD("data.source_per_class", source_per_class, parse_u64, fmt_u),
        FA_FIELD("data.target_per_class", target_per_class, parse_u64, fmt_u),
        FA_FIELD("data.train_fraction", train_fraction, parse_double, fmt),

        FA_FIELD("source.brightness_shift", source.brightness_shift, parse_double, fmt),
        FA_FIELD("source.contrast_scale", source.contrast_scale, parse_double, fmt),
        FA_FIELD("source.noise_std", source.noise_std, parse_double, fmt),
        FA_FIELD("source.rotation_deg", source.rotation_deg, parse_double, fmt),
        FA_FIELD("source.seed", source.seed, parse_u64, fmt_u),

        FA_FIELD("model.hidden", shape.hidden, parse_list<std::size_t>, fmt_list),
        FA_FIELD("model.embedding_dim", shape.embedding_dim, parse_u64, fmt_u),
        FA_FIELD("model.linear_std", init.linear_std, parse_double, fmt),
        FA_FIELD("model.xavier_gamma", init.xavier_gamma, parse_bool, fmt_bool),
        FA_FIELD("model.bn_momentum", init.bn_momentum, parse_double, fmt),
        FA_FIELD("model.bn_epsilon", init.bn_epsilon, parse_double, fmt),

        FA_FIELD("sampler.ridge", sampler.ridge, parse_double, fmt),
        FA_FIELD("sampler.budget", sampler.budget, parse_double, fmt),
        FA_FIELD("sampler.q_init", sampler.q_init, parse_double, fmt),
        FA_FIELD("sampler.q_min", sampler.q_min, parse_double, fmt),
        FA_FIELD("sampler.q_max", sampler.q_max, parse_double, fmt),
        FA_FIELD("sampler.rate_floor", sampler.rate_floor, parse_double, fmt),
    };
    add_train_fields(f, "server", &ExperimentConfig::server_train);
    add_train_fields(f, "client", &ExperimentConfig::client_train);
    return f;
  }();
  return table;
}

#undef FA_FIELD

bool client_section(const std::string& section, std::uint32_t& index) {
  if (section.size() <= 6 || section.compare(0, 6, "client") != 0) return false;
  const std::string digits = section.substr(6);
  if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) return false;
  index = parse_u32(digits);
  return true;
}

void set_client_key(ClientSpec& spec, const std::string& key, const std::string& v) {
  if (key == "id") spec.id = v;
  else if (key == "brightness_shift") spec.domain.brightness_shift = parse_double(v);
  else if (key == "contrast_scale") spec.domain.contrast_scale = parse_double(v);
  else if (key == "noise_std") spec.domain.noise_std = parse_double(v);
  else if (key == "rotation_deg") spec.domain.rotation_deg = parse_double(v);
  else if (key == "seed") spec.domain.seed = parse_u64(v);
  else throw Error(ErrorCode::Config, "unknown key");
}

std::uint64_t hash_name(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for fewer than two values.
double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double mean_accuracy(const RoundMetrics& metrics) {
  std::vector<double> acc;
  for (const auto& c : metrics.clients)
    if (c.responded) acc.push_back(c.accuracy);
  return mean_of(acc);
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / name).string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << std::setprecision(17);
  return out;
}

void write_json(const std::string& dir, const std::string& name, const nlohmann::json& j) {
  auto out = open_out(dir, name);
  out << j.dump(2) << '\n';
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.source.noise_std = 0.02;
  c.source.seed = 1;
  c.server_train.lr = 0.01;
  c.server_train.batch_size = 128;
  c.server_train.epochs = 300;
  c.server_train.schedule.milestones = {150, 250};
  c.client_train.lr = 0.1;
  c.client_train.batch_size = 32;
  c.client_train.epochs = 200;
  c.client_train.schedule.milestones = {100, 150};
  client_slot(c, 0);
  return c;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw Error(ErrorCode::Config, key + ": expected section.key");
  const std::string section = key.substr(0, dot);
  const std::string name = key.substr(dot + 1);
  try {
    std::uint32_t index = 0;
    if (client_section(section, index)) {
      ClientSpec& spec = client_slot(config, index);
      set_client_key(spec, name, value);
      return;
    }
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(config, value);
        return;
      }
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, key + ": " + e.what());
  }
  throw Error(ErrorCode::Config, key + ": unknown key");
}

std::string get_setting(const ExperimentConfig& config, const std::string& key) {
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    const std::string name = key.substr(dot + 1);
    std::uint32_t index = 0;
    if (client_section(key.substr(0, dot), index)) {
      const auto it = config.clients.find(index);
      if (it == config.clients.end()) throw Error(ErrorCode::Config, key + ": no such client");
      const auto& d = it->second.domain;
      if (name == "id") return it->second.id;
      if (name == "brightness_shift") return fmt(d.brightness_shift);
      if (name == "contrast_scale") return fmt(d.contrast_scale);
      if (name == "noise_std") return fmt(d.noise_std);
      if (name == "rotation_deg") return fmt(d.rotation_deg);
      if (name == "seed") return std::to_string(d.seed);
    }
  }
  for (const auto& f : fields())
    if (f.key == key) return f.get(config);
  throw Error(ErrorCode::Config, key + ": unknown key");
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::Config, "override '" + assignment + "' lacks '='");
  apply_setting(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

ExperimentConfig parse_config(const std::string& text) {
  // The INI reader only knows ';' comments.
  std::stringstream cleaned;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] == '#') continue;
    cleaned << line << '\n';
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(cleaned, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::Config, std::string("malformed config: ") + e.what());
  }
  ExperimentConfig config = default_config();
  std::vector<std::string> problems;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      problems.push_back(section + ": key outside a section");
      continue;
    }
    for (const auto& [key, value] : body) {
      try {
        apply_setting(config, section + "." + key, value.data());
      } catch (const Error& e) {
        problems.push_back(e.what());
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::Config, msg);
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  for (const auto& [index, spec] : config.clients) {
    const auto& d = spec.domain;
    out << "\n[client" << index << "]\n"
        << "id = " << spec.id << '\n'
        << "brightness_shift = " << fmt(d.brightness_shift) << '\n'
        << "contrast_scale = " << fmt(d.contrast_scale) << '\n'
        << "noise_std = " << fmt(d.noise_std) << '\n'
        << "rotation_deg = " << fmt(d.rotation_deg) << '\n'
        << "seed = " << d.seed << '\n';
  }
  return out.str();
}

void validate(const ExperimentConfig& c) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& key, const std::string& why) {
    if (!ok) bad.push_back(key + " (" + why + ")");
  };
  check(c.repetitions >= 1, "experiment.repetitions", "must be at least 1");
  check(c.rounds >= 1, "experiment.rounds", "must be at least 1");
  check(!c.k_values.empty(), "experiment.k_values", "must list at least one k");
  check(c.base.class_count >= 1, "data.classes", "must be at least 1");
  check(c.class_subset <= c.base.class_count, "experiment.class_subset", "exceeds data.classes");
  check(c.base.height >= 2 && c.base.width >= 2, "data.height/data.width", "must be at least 2");
  check(c.source_per_class >= 1, "data.source_per_class", "must be at least 1");
  check(c.target_per_class >= 2, "data.target_per_class", "must be at least 2 for the split");
  check(c.train_fraction > 0.0 && c.train_fraction < 1.0, "data.train_fraction", "must lie in (0, 1)");
  check(c.source.contrast_scale > 0.0, "source.contrast_scale", "must be positive");
  check(c.source.noise_std >= 0.0, "source.noise_std", "must be non-negative");
  check(c.shape.embedding_dim >= 1, "model.embedding_dim", "must be at least 1");
  check(std::all_of(c.shape.hidden.begin(), c.shape.hidden.end(), [](std::size_t h) { return h > 0; }),
        "model.hidden", "widths must be positive");
  check(c.init.linear_std > 0.0, "model.linear_std", "must be positive");
  check(c.init.bn_momentum > 0.0 && c.init.bn_momentum <= 1.0, "model.bn_momentum", "must lie in (0, 1]");
  check(c.init.bn_epsilon > 0.0, "model.bn_epsilon", "must be positive");
  check(c.transport.timeout.count() > 0, "experiment.timeout_ms", "must be positive");
  check(!c.clients.empty(), "experiment.clients", "at least one client is required");
  std::vector<std::string> ids;
  for (const auto& [index, spec] : c.clients) {
    const std::string sec = "client" + std::to_string(index);
    check(!spec.id.empty(), sec + ".id", "must not be empty");
    check(spec.domain.contrast_scale > 0.0, sec + ".contrast_scale", "must be positive");
    check(spec.domain.noise_std >= 0.0, sec + ".noise_std", "must be non-negative");
    check(std::find(ids.begin(), ids.end(), spec.id) == ids.end(), sec + ".id", "duplicate client id");
    ids.push_back(spec.id);
  }
  const std::pair<const char*, const TrainConfig*> trains[] = {{"server", &c.server_train},
                                                               {"client", &c.client_train}};
  for (const auto& [name, t] : trains) {
    try {
      validate(*t);
    } catch (const Error& e) {
      bad.push_back(std::string(name) + ".* (" + e.what() + ")");
    }
  }
  try {
    validate(c.sampler);
  } catch (const Error& e) {
    bad.push_back(std::string("sampler.* (") + e.what() + ")");
  }
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw Error(ErrorCode::Config, msg);
  }
}

ExperimentData make_data(const ExperimentConfig& config, std::uint64_t run_seed) {
  ExperimentData data;
  data.source = generate_domain(config.base, config.source, config.source_per_class, "source");
  for (const auto& [index, spec] : config.clients) {
    const Dataset target = generate_domain(config.base, spec.domain, config.target_per_class, spec.id);
    Rng rng(derive_seed(run_seed, hash_name(spec.id)));
    data.targets.push_back(split(target, config.train_fraction, 1.0 - config.train_fraction, rng));
  }
  return data;
}

ModelParams initial_model(const ExperimentConfig& config, std::uint64_t run_seed) {
  ModelShape shape = config.shape;
  shape.input_dim = static_cast<std::size_t>(config.base.height) * config.base.width;
  shape.class_count = config.base.class_count;
  Rng rng(derive_seed(run_seed, 0x696E6974));
  return init_model(shape, config.init, rng);
}

PretrainResult pretrain(const ExperimentConfig& config, std::uint64_t run_seed, const Dataset& source) {
  Rng rng(derive_seed(run_seed, 0x70726574));
  return server_pretrain(source, initial_model(config, run_seed), config.server_train, rng);
}

std::vector<ClientSetup> client_setups(const ExperimentConfig& config, const ExperimentData& data,
                                       const ModelParams& baseline) {
  std::vector<ClientSetup> out;
  std::size_t i = 0;
  for (const auto& [index, spec] : config.clients) {
    ClientSetup s;
    s.client_id = spec.id;
    s.train_pool = data.targets[i].first;
    s.test = data.targets[i].second;
    if (config.strategy != Strategy::OnDemand) {
      s.installed_baseline = baseline;
      s.installed_version = 1;
    }
    s.train = config.client_train;
    s.sampler = config.sampler;
    out.push_back(std::move(s));
    ++i;
  }
  return out;
}

RoundPlan round_plan(const ExperimentConfig& config, std::uint32_t round, std::uint64_t run_seed) {
  RoundPlan plan;
  plan.round = round;
  plan.k = config.k;
  plan.class_subset = config.class_subset;
  plan.epochs = static_cast<std::uint32_t>(config.client_train.epochs);
  plan.lr = config.client_train.lr;
  plan.seed = config.redraw_support ? run_seed : config.seed;
  plan.sampling_enabled = config.sampling_enabled;
  plan.upstream = config.upstream;
  plan.strategy = config.strategy;
  return plan;
}

std::vector<double> zero_shot_accuracy(const ExperimentConfig& config, const ExperimentData& data,
                                       const PretrainResult& pretrained, std::uint64_t run_seed) {
  const RoundPlan plan = round_plan(config, 0, run_seed);
  std::vector<double> out;
  std::size_t i = 0;
  for (const auto& [index, spec] : config.clients) {
    const RoundConfig rc = round_config_for(plan, spec.id, config.base.class_count);
    ClientState state;
    state.client_id = spec.id;
    state.model = pretrained.params;
    state.protos = pretrained.source_prototypes;
    const Dataset test = filter_classes(data.targets[i].second, rc.classes);
    out.push_back(evaluate(state, test.samples).value());
    ++i;
  }
  return out;
}

nlohmann::json to_json(const RoundMetrics& metrics) {
  nlohmann::json j;
  j["round"] = metrics.round;
  j["version_before"] = metrics.version_before;
  j["version_after"] = metrics.version_after;
  j["clients"] = nlohmann::json::array();
  for (const auto& c : metrics.clients) {
    j["clients"].push_back({{"client_id", c.client_id},
                            {"responded", c.responded},
                            {"error", c.error},
                            {"accuracy", c.accuracy},
                            {"correct", c.correct},
                            {"total", c.total},
                            {"labels_requested", c.labels_requested},
                            {"support_size", c.support_size},
                            {"first_contact", to_string(c.first_contact)},
                            {"first_contact_bytes", c.first_contact_bytes},
                            {"bytes_down", c.bytes_down},
                            {"bytes_up", c.bytes_up}});
  }
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
  validate(config);
  ExperimentResult result;
  nlohmann::json timing = nlohmann::json::array();
  for (std::uint32_t run = 0; run < config.repetitions; ++run) {
    const auto start = Clock::now();
    RunResult r;
    r.run = run;
    r.seed = config.seed + run;
    const ExperimentData data = make_data(config, r.seed);
    const PretrainResult pretrained = pretrain(config, r.seed, data.source);
    r.pretrain_losses = pretrained.losses;
    r.zero_shot = zero_shot_accuracy(config, data, pretrained, r.seed);
    ServerState server = make_server(pretrained);
    const auto setups = client_setups(config, data, server.baseline);
    for (std::uint32_t round = 0; round < config.rounds; ++round)
      r.rounds.push_back(run_round(server, setups, config.transport, round_plan(config, round, r.seed)));
    r.accuracy = mean_accuracy(r.rounds.back());
    timing.push_back({{"run", run}, {"seconds", seconds_since(start)}});
    result.runs.push_back(std::move(r));
  }

  nlohmann::json& s = result.summary;
  s["command"] = "simulate";
  s["strategy"] = to_string(config.strategy);
  s["k"] = config.k;
  s["repetitions"] = config.repetitions;
  s["rounds"] = config.rounds;
  s["k0_semantics"] = "source prototypes served by the server; no client training";
  std::vector<double> overall, zero;
  nlohmann::json clients = nlohmann::json::array();
  std::size_t ci = 0;
  for (const auto& [index, spec] : config.clients) {
    std::vector<double> acc, zs;
    for (const auto& r : result.runs) {
      const auto& m = r.rounds.back().clients[ci];
      if (m.responded) acc.push_back(m.accuracy);
      zs.push_back(r.zero_shot[ci]);
    }
    clients.push_back({{"client_id", spec.id},
                       {"accuracy_mean", mean_of(acc)},
                       {"accuracy_std", stddev_of(acc)},
                       {"zero_shot_mean", mean_of(zs)},
                       {"zero_shot_std", stddev_of(zs)},
                       {"responded_runs", acc.size()}});
    ++ci;
  }
  for (const auto& r : result.runs) {
    overall.push_back(r.accuracy);
    zero.push_back(mean_of(r.zero_shot));
  }
  s["clients"] = clients;
  s["accuracy_mean"] = mean_of(overall);
  s["accuracy_std"] = stddev_of(overall);
  s["zero_shot_mean"] = mean_of(zero);
  s["zero_shot_std"] = stddev_of(zero);
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : result.runs) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& m : r.rounds) rounds.push_back(to_json(m));
    runs.push_back({{"run", r.run}, {"seed", r.seed}, {"accuracy", r.accuracy},
                    {"zero_shot", r.zero_shot}, {"rounds", rounds}});
  }
  s["runs"] = runs;

  if (!out_dir.empty()) {
    auto metrics = open_out(out_dir, "metrics.csv");
    metrics << "run,seed,round,client,responded,k,accuracy,correct,total,zero_shot_accuracy,labels_requested,"
               "support_size,first_contact,first_contact_bytes,bytes_down,bytes_up,version_after,error\n";
    auto losses = open_out(out_dir, "losses.csv");
    losses << "run,stage,round,epoch,loss\n";
    std::optional<std::ofstream> telemetry;
    if (config.sampling_enabled) {
      telemetry = open_out(out_dir, "telemetry.csv");
      *telemetry << "run,round,client,t,selected,q_t,p_t,keep\n";
    }
    for (const auto& r : result.runs) {
      for (std::size_t e = 0; e < r.pretrain_losses.size(); ++e)
        losses << r.run << ",pretrain,," << e << ',' << r.pretrain_losses[e] << '\n';
      for (const auto& m : r.rounds) {
        for (std::size_t i = 0; i < m.clients.size(); ++i) {
          const auto& c = m.clients[i];
          metrics << r.run << ',' << r.seed << ',' << m.round << ',' << c.client_id << ',' << (c.responded ? 1 : 0)
                  << ',' << config.k << ',' << c.accuracy << ',' << c.correct << ',' << c.total << ','
                  << r.zero_shot[i] << ',' << c.labels_requested << ',' << c.support_size << ','
                  << to_string(c.first_contact) << ',' << c.first_contact_bytes << ',' << c.bytes_down << ','
                  << c.bytes_up << ',' << m.version_after << ',' << '"' << c.error << '"' << '\n';
          for (std::size_t e = 0; e < c.losses.size(); ++e)
            losses << r.run << ',' << c.client_id << ',' << m.round << ',' << e << ',' << c.losses[e] << '\n';
          if (telemetry) {
            for (const auto& t : c.telemetry)
              *telemetry << r.run << ',' << m.round << ',' << c.client_id << ',' << t.t << ',' << t.selected
                         << ',' << t.q << ',' << t.p << ',' << (t.keep ? 1 : 0) << '\n';
          }
        }
      }
    }
    write_json(out_dir, "summary.json", s);
    write_json(out_dir, "timing.json", timing);
  }
  return result;
}

SweepResult sweep_k(const ExperimentConfig& config, const std::string& out_dir) {
  validate(config);
  SweepResult result;
  for (auto k : config.k_values) result.rows.push_back({k, {}, 0.0, 0.0});
  for (std::uint32_t run = 0; run < config.repetitions; ++run) {
    const std::uint64_t seed = config.seed + run;
    const ExperimentData data = make_data(config, seed);
    const PretrainResult pretrained = pretrain(config, seed, data.source);
    result.zero_shot.push_back(mean_of(zero_shot_accuracy(config, data, pretrained, seed)));
    for (auto& row : result.rows) {
      ExperimentConfig c = config;
      c.k = row.k;
      ServerState server = make_server(pretrained);
      const auto setups = client_setups(c, data, server.baseline);
      RoundMetrics m;
      for (std::uint32_t round = 0; round < c.rounds; ++round)
        m = run_round(server, setups, c.transport, round_plan(c, round, seed));
      row.accuracies.push_back(mean_accuracy(m));
    }
  }
  for (auto& row : result.rows) {
    row.mean = mean_of(row.accuracies);
    row.stddev = stddev_of(row.accuracies);
  }

  nlohmann::json& s = result.summary;
  s["command"] = "sweep-k";
  s["repetitions"] = config.repetitions;
  s["seeds"] = nlohmann::json::array();
  for (std::uint32_t run = 0; run < config.repetitions; ++run) s["seeds"].push_back(config.seed + run);
  s["zero_shot"] = result.zero_shot;
  s["rows"] = nlohmann::json::array();
  for (const auto& row : result.rows)
    s["rows"].push_back({{"k", row.k}, {"mean", row.mean}, {"std", row.stddev}, {"accuracies", row.accuracies}});

  if (!out_dir.empty()) {
    auto csv = open_out(out_dir, "sweep_k.csv");
    csv << "k,runs,accuracy_mean,accuracy_std\n";
    for (const auto& row : result.rows)
      csv << row.k << ',' << row.accuracies.size() << ',' << row.mean << ',' << row.stddev << '\n';
    auto runs = open_out(out_dir, "sweep_k_runs.csv");
    runs << "run,seed,k,accuracy\n";
    for (const auto& row : result.rows)
      for (std::size_t r = 0; r < row.accuracies.size(); ++r)
        runs << r << ',' << config.seed + r << ',' << row.k << ',' << row.accuracies[r] << '\n';
    write_json(out_dir, "sweep_k.json", s);
  }
  return result;
}

StrategyComparison compare_strategies(const ExperimentConfig& config, const std::string& out_dir) {
  validate(config);
  StrategyComparison result;
  const std::uint64_t seed = config.seed;
  const ExperimentData data = make_data(config, seed);
  const PretrainResult pretrained = pretrain(config, seed, data.source);

  for (Strategy strategy : {Strategy::OnDemand, Strategy::PreConfigured, Strategy::DifferentialSync}) {
    ExperimentConfig c = config;
    c.strategy = strategy;
    StrategyReport report;
    report.strategy = strategy;
    ServerState server = make_server(pretrained);
    const auto setups = client_setups(c, data, server.baseline);
    for (std::uint32_t round = 0; round < c.rounds; ++round)
      report.rounds.push_back(run_round(server, setups, c.transport, round_plan(c, round, seed)));
    const ClientHello probe{"late-joiner", true, server.baseline_version};
    const Message reply = transmit_params(server, probe, strategy);
    report.late_joiner_reply = type_of(reply);
    report.late_joiner_bytes = encode_frame(reply).size();
    for (const auto& m : report.rounds.back().clients) report.accuracies.push_back(m.accuracy);
    result.reports.push_back(std::move(report));
  }
  result.accuracies_identical = std::all_of(result.reports.begin(), result.reports.end(), [&](const auto& r) {
    return r.accuracies == result.reports.front().accuracies;
  });

  nlohmann::json& s = result.summary;
  s["command"] = "compare-strategies";
  s["seed"] = seed;
  s["accuracies_identical"] = result.accuracies_identical;
  s["strategies"] = nlohmann::json::array();
  for (const auto& r : result.reports) {
    std::uint64_t first = 0, down = 0, up = 0;
    for (const auto& c : r.rounds.front().clients) first += c.first_contact_bytes;
    for (const auto& m : r.rounds)
      for (const auto& c : m.clients) {
        down += c.bytes_down;
        up += c.bytes_up;
      }
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& m : r.rounds) rounds.push_back(to_json(m));
    s["strategies"].push_back({{"strategy", to_string(r.strategy)},
                               {"first_round_first_contact_bytes", first},
                               {"late_joiner_reply", to_string(r.late_joiner_reply)},
                               {"late_joiner_bytes", r.late_joiner_bytes},
                               {"bytes_down", down},
                               {"bytes_up", up},
                               {"accuracies", r.accuracies},
                               {"rounds", rounds}});
  }

  if (!out_dir.empty()) {
    auto csv = open_out(out_dir, "strategies.csv");
    csv << "strategy,round,client,first_contact,first_contact_bytes,bytes_down,bytes_up,accuracy\n";
    for (const auto& r : result.reports) {
      for (const auto& m : r.rounds)
        for (const auto& c : m.clients)
          csv << to_string(r.strategy) << ',' << m.round << ',' << c.client_id << ',' << to_string(c.first_contact)
              << ',' << c.first_contact_bytes << ',' << c.bytes_down << ',' << c.bytes_up << ',' << c.accuracy
              << '\n';
      csv << to_string(r.strategy) << ",after_aggregation,late-joiner," << to_string(r.late_joiner_reply) << ','
          << r.late_joiner_bytes << ",,,\n";
    }
    write_json(out_dir, "strategies.json", s);
  }
  return result;
}

nlohmann::json pretrain_to(const ExperimentConfig& config, const std::string& out_dir, PretrainResult* result) {
  validate(config);
  const auto start = Clock::now();
  const Dataset source = generate_domain(config.base, config.source, config.source_per_class, "source");
  PretrainResult pretrained = pretrain(config, config.seed, source);
  nlohmann::json j;
  j["command"] = "pretrain";
  j["seed"] = config.seed;
  j["epochs"] = pretrained.losses.size();
  j["final_loss"] = pretrained.losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(pretrained.losses.back());
  j["source_classifier_accuracy"] = classifier_accuracy(pretrained.params, source);
  j["seconds"] = seconds_since(start);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::string model_path = (std::filesystem::path(out_dir) / "model.bin").string();
    save_model(pretrained.params, model_path);
    write_prototypes_csv(pretrained.source_prototypes,
                         (std::filesystem::path(out_dir) / "source_prototypes.csv").string());
    auto losses = open_out(out_dir, "losses.csv");
    losses << "epoch,loss\n";
    for (std::size_t e = 0; e < pretrained.losses.size(); ++e) losses << e << ',' << pretrained.losses[e] << '\n';
    j["model"] = model_path;
  }
  if (result) *result = std::move(pretrained);
  return j;
}

nlohmann::json serve(const ExperimentConfig& config, const std::optional<ModelParams>& model,
                     const std::string& out_dir, const std::function<void(std::uint16_t)>& on_listening) {
  validate(config);
  const Dataset source = generate_domain(config.base, config.source, config.source_per_class, "source");
  PretrainResult pretrained;
  if (model) {
    validate(*model);
    pretrained.params = *model;
    pretrained.source_prototypes = compute_prototypes(embed_samples(*model, source.samples));
  } else {
    pretrained = pretrain(config, config.seed, source);
  }
  ServerState server = make_server(pretrained);
  SocketListener listener(config.transport.host, config.transport.port);
  if (on_listening) on_listening(listener.port());

  nlohmann::json j;
  j["command"] = "serve";
  j["port"] = listener.port();
  j["strategy"] = to_string(config.strategy);
  j["rounds"] = nlohmann::json::array();
  std::vector<RoundMetrics> rounds;
  for (std::uint32_t round = 0; round < config.rounds; ++round) {
    rounds.push_back(serve_round(server, listener, config.clients.size(), round_plan(config, round, config.seed),
                                 config.transport.timeout));
    j["rounds"].push_back(to_json(rounds.back()));
  }
  j["version"] = server.version;
  j["accuracy_mean"] = mean_accuracy(rounds.back());
  if (!out_dir.empty()) {
    auto csv = open_out(out_dir, "serve_metrics.csv");
    csv << "round,client,responded,accuracy,correct,total,first_contact,first_contact_bytes,bytes_down,bytes_up,"
           "version_after,error\n";
    for (const auto& m : rounds)
      for (const auto& c : m.clients)
        csv << m.round << ',' << c.client_id << ',' << (c.responded ? 1 : 0) << ',' << c.accuracy << ','
            << c.correct << ',' << c.total << ',' << to_string(c.first_contact) << ',' << c.first_contact_bytes
            << ',' << c.bytes_down << ',' << c.bytes_up << ',' << m.version_after << ",\"" << c.error << "\"\n";
    save_model(server.global, (std::filesystem::path(out_dir) / "global.bin").string());
    write_json(out_dir, "serve.json", j);
  }
  return j;
}

nlohmann::json run_client(const ExperimentConfig& config, const std::string& client_id,
                          const std::optional<ModelParams>& baseline) {
  validate(config);
  const ExperimentData data = make_data(config, config.seed);
  std::size_t i = 0;
  for (const auto& [index, spec] : config.clients) {
    if (spec.id == client_id) break;
    ++i;
  }
  if (i == config.clients.size()) throw Error(ErrorCode::Config, "unknown client id '" + client_id + "'");
  ClientSetup setup;
  setup.client_id = client_id;
  setup.train_pool = data.targets[i].first;
  setup.test = data.targets[i].second;
  if (baseline) {
    setup.installed_baseline = baseline;
    setup.installed_version = 1;
  }
  setup.train = config.client_train;
  setup.sampler = config.sampler;

  nlohmann::json j;
  j["command"] = "client";
  j["client_id"] = client_id;
  j["rounds"] = nlohmann::json::array();
  for (std::uint32_t round = 0; round < config.rounds; ++round) {
    auto channel = connect_socket(config.transport.host, config.transport.port, config.transport.timeout,
                                  config.transport.timeout);
    const ClientOutcome out = run_client_session(*channel, setup);
    channel->close();
    j["rounds"].push_back({{"round", out.round.round},
                           {"k", out.round.k},
                           {"accuracy", out.report.total == 0 ? 0.0
                                                              : static_cast<double>(out.report.correct) /
                                                                    static_cast<double>(out.report.total)},
                           {"correct", out.report.correct},
                           {"total", out.report.total},
                           {"labels_requested", out.report.labels_requested},
                           {"support_size", out.report.support_size},
                           {"bytes_down", channel->bytes_received()},
                           {"bytes_up", channel->bytes_sent()}});
  }
  return j;
}

void export_embeddings(const ModelParams& model, const Dataset& dataset, const std::string& stage,
                       const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  if (!append) {
    for (std::size_t j = 0; j < model.embedding_dim(); ++j) out << 'e' << j << ',';
    out << "label,stage\n";
  }
  out << std::setprecision(17);
  for (const auto& e : embed_samples(model, dataset.samples)) {
    for (double v : e.embedding) out << v << ',';
    out << e.label << ',' << stage << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write to " + path + " failed");
}

void export_stages(const ExperimentConfig& config, const std::string& path) {
  validate(config);
  const std::uint64_t seed = config.seed;
  const ExperimentData data = make_data(config, seed);
  const Dataset& test = data.targets.front().second;
  export_embeddings(initial_model(config, seed), test, "baseline", path);
  const PretrainResult pretrained = pretrain(config, seed, data.source);
  export_embeddings(pretrained.params, test, "pretrained", path, true);

  const auto setups = client_setups(config, data, pretrained.params);
  const ClientSetup& setup = setups.front();
  const RoundConfig rc = round_config_for(round_plan(config, 0, seed), setup.client_id, config.base.class_count);
  ClientState state;
  state.client_id = setup.client_id;
  state.model = pretrained.params;
  state.protos = pretrained.source_prototypes;
  prepare_support(state, setup, rc);
  client_adapt(state, rc, setup.train);
  export_embeddings(state.model, test, "fine-tuned", path, true);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
      return 2;
    case ErrorCode::Scarcity:
    case ErrorCode::Stratification:
    case ErrorCode::EmptySupport:
    case ErrorCode::Exhaustion:
      return 3;
    case ErrorCode::Divergence:
      return 4;
    case ErrorCode::Transport:
    case ErrorCode::Protocol:
      return 5;
    default:
      return 1;
  }
}

}  // namespace fedacross
