#include "mclstm/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "mclstm/random.hpp"

namespace mclstm::tasks {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTestSeedTag = 0x7e57;
constexpr std::uint64_t kNoiseSeedTag = 0x9015e;

json base_descriptor(const std::string& name) {
  return json{{"name", name},
              {"generator_version", kGeneratorVersion},
              {"prng", std::string(Philox::kAlgorithm)}};
}

std::uint64_t scenario_tag(const std::string& name) {
  // FNV-1a; stable across platforms.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Dataset subset(const Dataset& data, std::size_t begin, std::size_t end, std::string split) {
  if (begin > end || end > data.size()) {
    throw ContractError("subset: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") outside dataset of " + std::to_string(data.size()));
  }
  auto rows = [&](const Tensor& t) {
    Shape shape = t.shape();
    const std::size_t row = t.size() / shape[0];
    shape[0] = end - begin;
    std::vector<double> values(t.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                               t.values().begin() + static_cast<std::ptrdiff_t>(end * row));
    return Tensor(std::move(shape), std::move(values));
  };
  Dataset out;
  out.mass = rows(data.mass);
  out.aux = rows(data.aux);
  out.targets = rows(data.targets);
  out.split = std::move(split);
  out.descriptor = data.descriptor;
  out.descriptor["range"] = {begin, end};
  out.descriptor["split"] = out.split;
  return out;
}

// ---------------------------------------------------------------------------

Dataset gen_addition(const AdditionSpec& spec) {
  if (spec.seq_len == 0) throw ContractError("gen_addition: seq_len must be positive");
  if (spec.n_marked < 1 || spec.n_marked > spec.seq_len) {
    throw ContractError("gen_addition: n_marked must lie in [1, seq_len]; got n_marked=" +
                        std::to_string(spec.n_marked) + " seq_len=" +
                        std::to_string(spec.seq_len));
  }
  if (!(spec.value_hi >= 0.0)) throw ContractError("gen_addition: value_hi must be >= 0");

  const std::size_t n = spec.count, steps = spec.seq_len;
  Dataset d;
  d.mass = Tensor({n, steps, 1});
  d.aux = Tensor({n, steps, 2});
  d.targets = Tensor({n, 1});
  d.split = spec.split;
  d.descriptor = base_descriptor("addition");
  d.descriptor["params"] = {{"count", spec.count},       {"seq_len", spec.seq_len},
                            {"value_hi", spec.value_hi}, {"n_marked", spec.n_marked},
                            {"seed", spec.seed}};
  d.descriptor["split"] = spec.split;

  Philox rng(spec.seed);
  std::vector<std::size_t> positions(steps);
  std::vector<char> marked(steps);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < steps; ++t) d.mass[s * steps + t] = rng.uniform(0.0, spec.value_hi);
    // Partial Fisher-Yates: the first n_marked entries are a uniform draw
    // of distinct positions.
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    for (std::size_t k = 0; k < spec.n_marked; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng.below(steps - k));
      std::swap(positions[k], positions[j]);
    }
    std::fill(marked.begin(), marked.end(), 0);
    for (std::size_t k = 0; k < spec.n_marked; ++k) marked[positions[k]] = 1;
    double target = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (marked[t]) {
        d.aux[(s * steps + t) * 2 + kMarkChannel] = 1.0;
        target += d.mass[s * steps + t];
      }
    }
    d.aux[(s * steps + steps - 1) * 2 + kEndChannel] = -1.0;
    d.targets[s] = target;
  }
  return d;
}

const std::vector<AdditionScenario>& addition_scenarios() {
  static const std::vector<AdditionScenario> kScenarios = {
      {"reference", 100, 0.5, 2},
      {"seq-length", 1000, 0.5, 2},
      {"input-range", 100, 5.0, 2},
      {"count", 100, 0.5, 20},
      {"combo", 500, 2.5, 10},
  };
  return kScenarios;
}

const AdditionScenario& addition_scenario(const std::string& name) {
  for (const auto& s : addition_scenarios()) {
    if (s.name == name) return s;
  }
  throw ContractError("unknown addition scenario '" + name + "'");
}

AdditionSplits gen_addition_reference(std::size_t total, std::size_t test_count,
                                      std::uint64_t seed) {
  const AdditionScenario& ref = addition_scenario("reference");
  Dataset all = gen_addition({total, ref.seq_len, ref.value_hi, ref.n_marked, seed, "trainvalid"});
  AdditionSplits out;
  out.train = subset(all, 0, total / 2, "train");
  out.valid = subset(all, total / 2, total, "valid");
  out.test = gen_addition_scenario("reference", test_count, seed);
  return out;
}

Dataset gen_addition_scenario(const std::string& name, std::size_t count, std::uint64_t seed) {
  const AdditionScenario& sc = addition_scenario(name);
  const std::uint64_t test_seed = derive_seed(derive_seed(seed, kTestSeedTag), scenario_tag(name));
  Dataset d = gen_addition({count, sc.seq_len, sc.value_hi, sc.n_marked, test_seed, "test"});
  d.descriptor["scenario"] = name;
  return d;
}

// ---------------------------------------------------------------------------

char op_symbol(ArithmeticOp op) {
  switch (op) {
    case ArithmeticOp::Add: return '+';
    case ArithmeticOp::Sub: return '-';
    case ArithmeticOp::Mul: return '*';
  }
  return '?';
}

ArithmeticOp parse_op(const std::string& s) {
  if (s == "+" || s == "add") return ArithmeticOp::Add;
  if (s == "-" || s == "sub") return ArithmeticOp::Sub;
  if (s == "*" || s == "mul") return ArithmeticOp::Mul;
  throw ContractError("unknown arithmetic op '" + s + "'");
}

double apply_op(ArithmeticOp op, double lhs, double rhs) {
  switch (op) {
    case ArithmeticOp::Add: return lhs + rhs;
    case ArithmeticOp::Sub: return lhs - rhs;
    case ArithmeticOp::Mul: return lhs * rhs;
  }
  return 0.0;
}

void validate_subsets(const SubsetSpec& s, std::size_t width) {
  if (s.a < 1 || s.b < s.a || s.b > s.a + s.c || s.b + s.c > width) {
    throw ContractError("invalid subsets a=" + std::to_string(s.a) + " b=" + std::to_string(s.b) +
                        " c=" + std::to_string(s.c) + " for width " + std::to_string(width) +
                        " (need 1 <= a <= b <= a+c and b+c <= width)");
  }
}

double arithmetic_target(ArithmeticOp op, const SubsetSpec& s, const double* sample,
                         std::size_t steps, std::size_t width) {
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double* row = sample + t * width;
    for (std::size_t k = s.a; k <= s.a + s.c; ++k) lhs += row[k - 1];
    for (std::size_t k = s.b; k <= s.b + s.c; ++k) rhs += row[k - 1];
  }
  return apply_op(op, lhs, rhs);
}

Dataset gen_recurrent_arithmetic(const RecurrentArithmeticSpec& spec) {
  validate_subsets(spec.subsets, spec.width);
  if (spec.steps == 0) throw ContractError("gen_recurrent_arithmetic: steps must be positive");
  const std::size_t n = spec.count, steps = spec.steps, width = spec.width;
  Dataset d;
  d.mass = Tensor({n, steps, width});
  d.aux = Tensor({n, steps, 1}, 1.0);
  d.targets = Tensor({n, 1});
  d.split = spec.split;
  d.descriptor = base_descriptor("recurrent-arithmetic");
  d.descriptor["params"] = {{"op", std::string(1, op_symbol(spec.op))},
                            {"steps", steps},
                            {"a", spec.subsets.a},
                            {"b", spec.subsets.b},
                            {"c", spec.subsets.c},
                            {"count", n},
                            {"width", width},
                            {"value_lo", spec.value_lo},
                            {"value_hi", spec.value_hi},
                            {"seed", spec.seed}};
  d.descriptor["split"] = spec.split;
  Philox rng(spec.seed);
  for (double& v : d.mass.data()) v = rng.uniform(spec.value_lo, spec.value_hi);
  for (std::size_t s = 0; s < n; ++s) {
    d.aux[s * steps + steps - 1] = -1.0;
    d.targets[s] = arithmetic_target(spec.op, spec.subsets, &d.mass[s * steps * width], steps, width);
  }
  return d;
}

StaticArithmeticSplits gen_static_arithmetic(const StaticArithmeticSpec& spec) {
  constexpr std::size_t kSubsetSpan = 24;  // c: 25 entries per subset
  constexpr std::size_t kOffset = 12;      // b - a
  if (spec.width < kSubsetSpan + kOffset + 1) {
    throw ContractError("gen_static_arithmetic: width too small for the subset layout");
  }
  Philox rng(spec.seed);
  SubsetSpec subsets;
  subsets.c = kSubsetSpan;
  subsets.a = 1 + static_cast<std::size_t>(rng.below(spec.width - kSubsetSpan - kOffset));
  subsets.b = subsets.a + kOffset;
  validate_subsets(subsets, spec.width);

  auto make = [&](std::size_t count, double lo, double hi, std::uint64_t seed, std::string split) {
    RecurrentArithmeticSpec r;
    r.op = spec.op;
    r.steps = 1;
    r.subsets = subsets;
    r.count = count;
    r.width = spec.width;
    r.value_lo = lo;
    r.value_hi = hi;
    r.seed = seed;
    r.split = split;
    Dataset d = gen_recurrent_arithmetic(r);
    d.descriptor["name"] = "static-arithmetic";
    d.descriptor["params"] = {{"op", std::string(1, op_symbol(spec.op))},
                              {"seed", spec.seed},
                              {"train_count", spec.train_count},
                              {"test_count", spec.test_count},
                              {"width", spec.width},
                              {"a", subsets.a},
                              {"b", subsets.b},
                              {"c", subsets.c}};
    return d;
  };
  StaticArithmeticSplits out;
  out.subsets = subsets;
  out.train = make(spec.train_count, 1.0, 2.0, derive_seed(spec.seed, 1), "train");
  out.test = make(spec.test_count, 2.0, 6.0, derive_seed(spec.seed, kTestSeedTag), "test");
  return out;
}

// ---------------------------------------------------------------------------

PendulumSeries pendulum_series(const PendulumConfig& cfg) {
  if (!(cfg.length > 0.0)) throw ContractError("pendulum: length must be positive");
  if (!(cfg.gamma >= 0.0)) throw ContractError("pendulum: gamma must be non-negative");
  if (!(cfg.dt > 0.0)) throw ContractError("pendulum: dt must be positive");
  const double omega0_sq = cfg.gravity / cfg.length;
  if (!(cfg.gamma * cfg.gamma < 4.0 * omega0_sq)) {
    throw DomainError("pendulum: overdamped configuration; need gamma^2 < 4 g / length, got gamma=" +
                      std::to_string(cfg.gamma) + " with 4 g / length = " +
                      std::to_string(4.0 * omega0_sq));
  }
  const double omega = std::sqrt(omega0_sq - 0.25 * cfg.gamma * cfg.gamma);
  const double half_gamma = 0.5 * cfg.gamma;

  PendulumSeries out;
  out.time.resize(cfg.steps);
  out.theta.resize(cfg.steps);
  out.e_pot.resize(cfg.steps);
  out.e_kin.resize(cfg.steps);
  Philox noise(derive_seed(cfg.seed, kNoiseSeedTag));
  for (std::size_t n = 0; n < cfg.steps; ++n) {
    const double t = static_cast<double>(n) * cfg.dt;
    const double decay = std::exp(-half_gamma * t);
    const double cw = std::cos(omega * t), sw = std::sin(omega * t);
    const double theta = cfg.theta0 * decay * (cw + (half_gamma / omega) * sw);
    const double theta_dot = -cfg.theta0 * decay * (omega0_sq / omega) * sw;
    out.time[n] = t;
    out.theta[n] = theta;
    out.e_pot[n] = 0.5 * cfg.mass * cfg.gravity * cfg.length * theta * theta;
    out.e_kin[n] = 0.5 * cfg.mass * cfg.length * cfg.length * theta_dot * theta_dot;
    if (cfg.noise_sigma > 0.0) {
      out.e_pot[n] += noise.normal(0.0, cfg.noise_sigma);
      out.e_kin[n] += noise.normal(0.0, cfg.noise_sigma);
    }
  }
  return out;
}

json pendulum_descriptor(const PendulumConfig& cfg) {
  json d = base_descriptor("pendulum");
  d["params"] = {{"theta0", cfg.theta0}, {"length", cfg.length},   {"gamma", cfg.gamma},
                 {"noise_sigma", cfg.noise_sigma}, {"steps", cfg.steps},
                 {"dt", cfg.dt},         {"mass", cfg.mass},       {"gravity", cfg.gravity},
                 {"seed", cfg.seed},     {"damping_form", "gamma * dtheta/dt"}};
  return d;
}

std::array<double, kEmbeddingSize> temporal_embedding(std::size_t t, std::size_t horizon) {
  if (horizon == 0) throw ContractError("temporal_embedding: horizon must be positive");
  std::array<double, kEmbeddingSize> out{};
  // Reduce t mod horizon first so the phase stays exact for large t.
  const double phase = static_cast<double>(t % horizon) / static_cast<double>(horizon);
  for (std::size_t j = 0; j < kEmbeddingSize; ++j) {
    const double freq = static_cast<double>(std::size_t{1} << j);
    out[j] = std::sin(2.0 * std::numbers::pi * freq * phase);
  }
  return out;
}

Dataset pendulum_dataset(const PendulumConfig& cfg) {
  const PendulumSeries s = pendulum_series(cfg);
  const std::size_t steps = cfg.steps;
  Dataset d;
  d.mass = Tensor({1, steps, 1});
  d.aux = Tensor({1, steps, kEmbeddingSize});
  d.targets = Tensor({1, steps, 2});
  for (std::size_t t = 0; t < steps; ++t) {
    const auto emb = temporal_embedding(t, steps);
    std::copy(emb.begin(), emb.end(), &d.aux[t * kEmbeddingSize]);
    d.targets[t * 2] = s.e_pot[t];
    d.targets[t * 2 + 1] = s.e_kin[t];
  }
  d.split = "train";
  d.descriptor = pendulum_descriptor(cfg);
  d.descriptor["split"] = d.split;
  return d;
}

// ---------------------------------------------------------------------------

Dataset regenerate(const json& descriptor) {
  const std::string name = descriptor.at("name").get<std::string>();
  if (descriptor.value("generator_version", 0) != kGeneratorVersion) {
    throw ContractError("regenerate: descriptor generator version mismatch");
  }
  const json& p = descriptor.at("params");
  const std::string split = descriptor.value("split", "train");
  Dataset d;
  if (name == "addition") {
    d = gen_addition({p.at("count").get<std::size_t>(), p.at("seq_len").get<std::size_t>(),
                      p.at("value_hi").get<double>(), p.at("n_marked").get<std::size_t>(),
                      p.at("seed").get<std::uint64_t>(), split});
    if (descriptor.contains("scenario")) d.descriptor["scenario"] = descriptor["scenario"];
  } else if (name == "recurrent-arithmetic") {
    RecurrentArithmeticSpec r;
    r.op = parse_op(p.at("op").get<std::string>());
    r.steps = p.at("steps").get<std::size_t>();
    r.subsets = {p.at("a").get<std::size_t>(), p.at("b").get<std::size_t>(),
                 p.at("c").get<std::size_t>()};
    r.count = p.at("count").get<std::size_t>();
    r.width = p.at("width").get<std::size_t>();
    r.value_lo = p.at("value_lo").get<double>();
    r.value_hi = p.at("value_hi").get<double>();
    r.seed = p.at("seed").get<std::uint64_t>();
    r.split = split;
    d = gen_recurrent_arithmetic(r);
  } else if (name == "static-arithmetic") {
    StaticArithmeticSpec s;
    s.op = parse_op(p.at("op").get<std::string>());
    s.seed = p.at("seed").get<std::uint64_t>();
    s.train_count = p.at("train_count").get<std::size_t>();
    s.test_count = p.at("test_count").get<std::size_t>();
    s.width = p.at("width").get<std::size_t>();
    StaticArithmeticSplits both = gen_static_arithmetic(s);
    d = split == "test" ? std::move(both.test) : std::move(both.train);
  } else if (name == "pendulum") {
    PendulumConfig c;
    c.theta0 = p.at("theta0").get<double>();
    c.length = p.at("length").get<double>();
    c.gamma = p.at("gamma").get<double>();
    c.noise_sigma = p.at("noise_sigma").get<double>();
    c.steps = p.at("steps").get<std::size_t>();
    c.dt = p.at("dt").get<double>();
    c.mass = p.at("mass").get<double>();
    c.gravity = p.at("gravity").get<double>();
    c.seed = p.at("seed").get<std::uint64_t>();
    d = pendulum_dataset(c);
  } else {
    throw ContractError("regenerate: unknown generator '" + name + "'");
  }
  if (descriptor.contains("range")) {
    const auto range = descriptor.at("range").get<std::vector<std::size_t>>();
    d = subset(d, range.at(0), range.at(1), split);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

constexpr char kMagic[8] = {'M', 'C', 'L', 'S', 'T', 'M', 'D', 'S'};

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw std::runtime_error("dataset file truncated: " + path.string());
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

std::ifstream open_checked(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("not a dataset file (bad magic): " + path.string());
  }
  return in;
}

json read_header(std::istream& in, const std::filesystem::path& path) {
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kDatasetFileVersion) {
    throw std::runtime_error("unsupported dataset file version " + std::to_string(version) +
                             " in " + path.string());
  }
  const auto length = get_le<std::uint64_t>(in, path);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw std::runtime_error("dataset header truncated: " + path.string());
  }
  return json::parse(text);
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& data, const json& extra) {
  const std::pair<const char*, const Tensor*> arrays[] = {
      {"mass", &data.mass}, {"aux", &data.aux}, {"targets", &data.targets}};
  json header{{"descriptor", data.descriptor}, {"split", data.split}, {"extra", extra}};
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : arrays) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size() * sizeof(double);
  }
  header["arrays"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  out.write(kMagic, 8);
  put_le<std::uint32_t>(out, kDatasetFileVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : arrays) {
    for (double v : t->data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_dataset_header(const std::filesystem::path& path) {
  std::ifstream in = open_checked(path);
  return read_header(in, path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in = open_checked(path);
  const json header = read_header(in, path);
  Dataset d;
  d.descriptor = header.at("descriptor");
  d.split = header.at("split").get<std::string>();
  for (const auto& entry : header.at("arrays")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
    Tensor t(std::move(shape), std::move(values));
    const std::string name = entry.at("name").get<std::string>();
    if (name == "mass") d.mass = std::move(t);
    else if (name == "aux") d.aux = std::move(t);
    else if (name == "targets") d.targets = std::move(t);
    else throw std::runtime_error("unknown array '" + name + "' in " + path.string());
  }
  return d;
}

}  // namespace mclstm::tasks
