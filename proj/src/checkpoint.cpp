#include "sglab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sglab/error.hpp"

namespace sg {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 28)) throw FormatError(std::string("checkpoint: implausible length for ") + what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return s;
}

}  // namespace

std::string serialize_denoiser_config(const DenoiserConfig& c) {
  std::ostringstream o;
  o << "num_layers = " << c.num_layers << '\n'
    << "model_dim = " << c.model_dim << '\n'
    << "num_heads = " << c.num_heads << '\n'
    << "mlp_ratio = " << c.mlp_ratio << '\n'
    << "layout = " << to_string(c.layout) << '\n'
    << "data_dim = " << c.data_dim << '\n'
    << "num_tokens = " << c.num_tokens << '\n'
    << "image_side = " << c.image_side << '\n'
    << "patch_size = " << c.patch_size << '\n'
    << "channels = " << c.channels << '\n'
    << "num_classes = " << c.num_classes << '\n'
    << "time_features = " << c.time_features << '\n'
    << "sparsity = " << to_string(c.sparsity) << '\n'
    << "route_start = " << c.route.start_layer << '\n'
    << "route_end = " << c.route.end_layer << '\n';
  return o.str();
}

DenoiserConfig parse_denoiser_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("checkpoint config lacks '") + k + "'");
    return it->second;
  };
  auto num = [&](const char* k) {
    try {
      return std::stoi(need(k));
    } catch (const std::logic_error&) {
      throw FormatError(std::string("checkpoint config: bad integer for '") + k + "'");
    }
  };
  DenoiserConfig c;
  c.num_layers = num("num_layers");
  c.model_dim = num("model_dim");
  c.num_heads = num("num_heads");
  c.mlp_ratio = num("mlp_ratio");
  c.layout = parse_token_layout(need("layout"));
  c.data_dim = num("data_dim");
  c.num_tokens = num("num_tokens");
  c.image_side = num("image_side");
  c.patch_size = num("patch_size");
  c.channels = num("channels");
  c.num_classes = num("num_classes");
  c.time_features = num("time_features");
  c.sparsity = parse_sparsity_mode(need("sparsity"));
  c.route.start_layer = num("route_start");
  c.route.end_layer = num("route_end");
  return c;
}

Checkpoint make_checkpoint(const Denoiser& model, std::uint64_t iteration, const std::string& rng_state) {
  return {model.config(), model.parameters(), iteration, rng_state};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put_string(out, serialize_denoiser_config(ckpt.config));
    put<std::uint64_t>(out, ckpt.iteration);
    put_string(out, ckpt.rng_state);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.parameters.size()));
    for (const auto& [name, t] : ckpt.parameters) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t dim : t.shape()) put<std::uint64_t>(out, dim);
      out.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw FormatError("error while writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a checkpoint file");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = parse_denoiser_config(get_string(in, "config"));
  ck.iteration = get<std::uint64_t>(in, "iteration");
  ck.rng_state = get_string(in, "rng state");
  const auto count = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in, "tensor name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>(in, "dims"));
      numel *= d;
    }
    if (numel > (std::size_t{1} << 32)) throw FormatError("checkpoint: implausible size for " + name);
    std::vector<double> values(numel);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw FormatError("checkpoint truncated in tensor " + name);
    ck.parameters.add(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  }
  in.peek();
  if (!in.eof()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

void load_parameters(Denoiser& model, const ParameterSet& params) {
  auto& dst = model.parameters();
  if (dst.size() != params.size()) throw FormatError("checkpoint tensor count does not match the architecture");
  for (auto& [name, t] : dst) {
    if (!params.contains(name)) throw FormatError("checkpoint lacks parameter '" + name + "'");
    const Tensor& src = params.get(name);
    if (src.shape() != t.shape()) throw FormatError("checkpoint shape mismatch for '" + name + "'");
    auto out = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
}

Denoiser model_from_checkpoint(const Checkpoint& ckpt) {
  Denoiser model(ckpt.config, 0);
  load_parameters(model, ckpt.parameters);
  return model;
}

}  // namespace sg
