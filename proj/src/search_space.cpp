#include "enas/search_space.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace enas {

std::size_t SearchSpace::total_blocks() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += static_cast<std::size_t>(s.max_depth());
  return n;
}

std::size_t SearchSpace::block_offset(std::size_t stage) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < stage; ++i) n += static_cast<std::size_t>(stages[i].max_depth());
  return n;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double uniform_real(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---- presets -------------------------------------------------------------------

namespace {

StageSpec stage(std::vector<int> depth, std::vector<int> width, std::vector<int> expand, std::vector<int> kernel,
                int stride) {
  return StageSpec{std::move(depth), std::move(width), std::move(expand), std::move(kernel), stride};
}

SearchSpace mbv3_large() {
  SearchSpace s;
  s.name = "mbv3-large";
  s.resolution = 224;
  s.in_channels = 3;
  s.classes = 1000;
  s.width_labels = {"0.5x", "1.0x"};
  s.stem = {16, 3, 2};
  s.first_block = {16, 3, 1, 1};
  const std::vector<int> d{2, 3, 4}, e{3, 4, 6}, k{3, 5, 7};
  s.stages = {stage(d, {12, 24}, e, k, 2), stage(d, {20, 40}, e, k, 2), stage(d, {40, 80}, e, k, 2),
              stage(d, {56, 112}, e, k, 1), stage(d, {80, 160}, e, k, 2)};
  s.final_conv = 960;
  s.feature_mix = 1280;
  return s;
}

SearchSpace mbv3_small() {
  SearchSpace s;
  s.name = "mbv3-small";
  s.resolution = 224;
  s.in_channels = 3;
  s.classes = 1000;
  s.width_labels = {"0.5x", "1.0x", "1.5x"};
  s.stem = {16, 3, 2};
  s.first_block = {16, 3, 1, 1};
  const std::vector<int> d{2, 3, 4}, e{3, 4, 6}, k{3, 5};
  s.stages = {stage(d, {12, 24, 36}, e, k, 2), stage(d, {20, 40, 60}, e, k, 2), stage(d, {24, 48, 72}, e, k, 1),
              stage(d, {48, 96, 144}, e, k, 2)};
  s.final_conv = 576;
  s.feature_mix = 1024;
  return s;
}

SearchSpace proxyless() {
  SearchSpace s;
  s.name = "proxyless";
  s.resolution = 224;
  s.in_channels = 3;
  s.classes = 1000;
  s.activation = Activation::relu;
  s.width_labels = {"1.0x"};
  s.stem = {32, 3, 2};
  s.first_block = {16, 3, 1, 1};
  const std::vector<int> d{2, 3, 4}, e{3, 4, 6}, k{3, 5, 7};
  s.stages = {stage(d, {24}, e, k, 2), stage(d, {40}, e, k, 2), stage(d, {80}, e, k, 2), stage(d, {96}, e, k, 1),
              stage(d, {192}, e, k, 2)};
  s.final_conv = 1280;
  s.feature_mix = 0;
  return s;
}

SearchSpace desk_tiny() {
  SearchSpace s;
  s.name = "desk-tiny";
  s.resolution = 16;
  s.in_channels = 3;
  s.classes = 10;
  s.width_labels = {"0.5x", "1.0x"};
  s.stem = {8, 3, 1};
  const std::vector<int> d{1, 2}, w{8, 16}, e{2, 4}, k{3, 5};
  s.stages = {stage(d, w, e, k, 2), stage(d, w, e, k, 2), stage(d, w, e, k, 1)};
  s.final_conv = 64;
  s.feature_mix = 0;
  return s;
}

[[noreturn]] void space_error(const std::string& what) { throw SpaceError("search space: " + what); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(std::string_view s, const std::string& ctx) {
  const std::string t = trim(s);
  int v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) space_error("bad integer '" + t + "' in " + ctx);
  return v;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<int> parse_int_list(std::string_view s, const std::string& ctx) {
  std::vector<int> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_int(item, ctx));
  return out;
}

// "out:8 kernel:3 stride:1" -> {out: "8", ...}
std::map<std::string, std::string> parse_fields(std::string_view s, const std::string& ctx) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) space_error("expected name:value in " + ctx + ", got '" + tok + "'");
    if (!out.emplace(tok.substr(0, colon), tok.substr(colon + 1)).second) {
      space_error("duplicate field '" + tok.substr(0, colon) + "' in " + ctx);
    }
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

SearchSpace build_space(std::string_view source) {
  SearchSpace s;
  if (source == "mbv3-large") {
    s = mbv3_large();
  } else if (source == "mbv3-small") {
    s = mbv3_small();
  } else if (source == "proxyless") {
    s = proxyless();
  } else if (source == "desk-tiny") {
    s = desk_tiny();
  } else if (source.find('=') != std::string_view::npos) {
    return parse_space_text(source);
  } else {
    space_error("unknown space '" + std::string(source) + "' (expected mbv3-large, mbv3-small, proxyless, desk-tiny or inline text)");
  }
  validate_space(s);
  return s;
}

SearchSpace parse_space_text(std::string_view text) {
  SearchSpace s;
  s.stem = {};
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) space_error("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const std::string ctx = "line " + std::to_string(line_no) + " (" + key + ")";
    if (key != "stage" && !seen.insert(key).second) space_error("duplicate key '" + key + "'");
    if (key == "name") {
      s.name = value;
    } else if (key == "resolution") {
      s.resolution = parse_int(value, ctx);
    } else if (key == "in_channels") {
      s.in_channels = parse_int(value, ctx);
    } else if (key == "classes") {
      s.classes = parse_int(value, ctx);
    } else if (key == "activation") {
      if (value == "hswish") {
        s.activation = Activation::hswish;
      } else if (value == "relu") {
        s.activation = Activation::relu;
      } else {
        space_error("unknown activation '" + value + "'");
      }
    } else if (key == "width_labels") {
      s.width_labels = split(value, ',');
    } else if (key == "final_conv") {
      s.final_conv = parse_int(value, ctx);
    } else if (key == "feature_mix") {
      s.feature_mix = parse_int(value, ctx);
    } else if (key == "stem" || key == "first_block" || key == "stage") {
      auto fields = parse_fields(value, ctx);
      auto take = [&](const std::string& f, bool required) -> std::string {
        auto it = fields.find(f);
        if (it == fields.end()) {
          if (required) space_error("missing field '" + f + "' in " + ctx);
          return {};
        }
        std::string v = it->second;
        fields.erase(it);
        return v;
      };
      if (key == "stem") {
        s.stem.out = parse_int(take("out", true), ctx);
        s.stem.kernel = parse_int(take("kernel", true), ctx);
        s.stem.stride = parse_int(take("stride", true), ctx);
      } else if (key == "first_block") {
        s.first_block.out = parse_int(take("out", true), ctx);
        s.first_block.kernel = parse_int(take("kernel", true), ctx);
        s.first_block.expand = parse_int(take("expand", true), ctx);
        s.first_block.stride = parse_int(take("stride", true), ctx);
      } else {
        StageSpec st;
        st.depth_choices = parse_int_list(take("depth", true), ctx);
        st.width_choices = parse_int_list(take("width", true), ctx);
        st.expand_choices = parse_int_list(take("expand", true), ctx);
        st.kernel_choices = parse_int_list(take("kernel", true), ctx);
        st.stride = parse_int(take("stride", true), ctx);
        s.stages.push_back(std::move(st));
      }
      if (!fields.empty()) space_error("unknown field '" + fields.begin()->first + "' in " + ctx);
    } else {
      space_error("unknown key '" + key + "' at line " + std::to_string(line_no));
    }
  }
  if (s.width_labels.empty() && !s.stages.empty()) {
    for (std::size_t i = 0; i < s.stages.front().width_choices.size(); ++i) s.width_labels.push_back("w" + std::to_string(i));
  }
  validate_space(s);
  return s;
}

std::string space_to_text(const SearchSpace& s) {
  std::ostringstream out;
  out << "name = " << s.name << "\n";
  out << "resolution = " << s.resolution << "\n";
  out << "in_channels = " << s.in_channels << "\n";
  out << "classes = " << s.classes << "\n";
  out << "activation = " << (s.activation == Activation::hswish ? "hswish" : "relu") << "\n";
  out << "width_labels = ";
  for (std::size_t i = 0; i < s.width_labels.size(); ++i) out << (i ? "," : "") << s.width_labels[i];
  out << "\n";
  out << "stem = out:" << s.stem.out << " kernel:" << s.stem.kernel << " stride:" << s.stem.stride << "\n";
  if (s.first_block.out > 0) {
    out << "first_block = out:" << s.first_block.out << " kernel:" << s.first_block.kernel
        << " expand:" << s.first_block.expand << " stride:" << s.first_block.stride << "\n";
  }
  for (const auto& st : s.stages) {
    out << "stage = depth:" << join(st.depth_choices) << " width:" << join(st.width_choices)
        << " expand:" << join(st.expand_choices) << " kernel:" << join(st.kernel_choices) << " stride:" << st.stride
        << "\n";
  }
  out << "final_conv = " << s.final_conv << "\n";
  out << "feature_mix = " << s.feature_mix << "\n";
  return out.str();
}

void validate_space(const SearchSpace& s) {
  if (s.resolution < 1) space_error("resolution must be positive");
  if (s.in_channels < 1) space_error("in_channels must be positive");
  if (s.classes < 2) space_error("classes must be at least 2");
  if (s.stem.out < 1 || s.stem.kernel < 1 || s.stem.kernel % 2 == 0 || s.stem.stride < 1) {
    space_error("stem needs positive width, odd kernel and positive stride");
  }
  if (s.first_block.out > 0 &&
      (s.first_block.kernel % 2 == 0 || s.first_block.expand < 1 || s.first_block.stride < 1)) {
    space_error("first_block needs odd kernel, expand >= 1 and positive stride");
  }
  if (s.stages.empty()) space_error("at least one elastic stage is required");
  if (s.width_labels.empty()) space_error("width_labels must not be empty");
  if (s.final_conv < 0 || s.feature_mix < 0) space_error("final_conv/feature_mix must be >= 0");
  auto sorted_unique = [](const std::vector<int>& v) {
    return std::adjacent_find(v.begin(), v.end(), [](int a, int b) { return a >= b; }) == v.end();
  };
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    const auto& st = s.stages[i];
    const std::string ctx = "stage " + std::to_string(i) + ": ";
    if (st.depth_choices.empty() || st.width_choices.empty() || st.expand_choices.empty() ||
        st.kernel_choices.empty()) {
      space_error(ctx + "every choice set must be non-empty");
    }
    if (!sorted_unique(st.depth_choices) || !sorted_unique(st.expand_choices) || !sorted_unique(st.kernel_choices)) {
      space_error(ctx + "depth/expand/kernel choices must be strictly increasing");
    }
    if (st.depth_choices.front() < 1) space_error(ctx + "depths must be >= 1");
    if (st.expand_choices.front() < 1) space_error(ctx + "expand ratios must be >= 1");
    for (int k : st.kernel_choices) {
      if (k < 1 || k % 2 == 0) space_error(ctx + "kernel sizes must be odd, got " + std::to_string(k));
    }
    if (st.width_choices.size() != s.width_labels.size()) {
      space_error(ctx + "has " + std::to_string(st.width_choices.size()) + " width choices but the space has " +
                  std::to_string(s.width_labels.size()) + " width multipliers");
    }
    if (!sorted_unique(st.width_choices) && st.width_choices.size() > 1) {
      space_error(ctx + "width choices must increase with the multiplier index");
    }
    if (st.width_choices.front() < 1) space_error(ctx + "widths must be positive");
    if (st.stride < 1) space_error(ctx + "stride must be positive");
  }
  // Spatial size must stay >= 1 through every stride for the space's resolution.
  long long size = s.resolution;
  auto shrink = [&](int k, int stride) { size = (size + 2 * (k / 2) - k) / stride + 1; };
  shrink(s.stem.kernel, s.stem.stride);
  if (s.first_block.out > 0) shrink(s.first_block.kernel, s.first_block.stride);
  for (const auto& st : s.stages) shrink(st.kernel_choices.front(), st.stride);
  if (size < 1) space_error("resolution " + std::to_string(s.resolution) + " collapses to zero through the strides");
}

BigInt count_subnets(const SearchSpace& space) {
  BigInt total = 1;
  for (const auto& st : space.stages) {
    const BigInt per_block = static_cast<unsigned>(st.kernel_choices.size() * st.expand_choices.size());
    BigInt stage_total = 0;
    for (int d : st.depth_choices) stage_total += boost::multiprecision::pow(per_block, static_cast<unsigned>(d));
    total *= stage_total;
  }
  return total * static_cast<unsigned>(space.width_labels.size());
}

// ---- architectures -----------------------------------------------------------

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

[[noreturn]] void arch_error(const std::string& what) { throw ArchError("architecture: " + what); }

}  // namespace

void validate_arch(const SearchSpace& space, const ArchConfig& arch) {
  if (arch.width_index < 0 || static_cast<std::size_t>(arch.width_index) >= space.width_labels.size()) {
    arch_error("width index " + std::to_string(arch.width_index) + " out of range");
  }
  if (arch.depths.size() != space.stages.size()) {
    arch_error("expected " + std::to_string(space.stages.size()) + " stage depths, got " + std::to_string(arch.depths.size()));
  }
  const std::size_t blocks = space.total_blocks();
  if (arch.kernels.size() != blocks || arch.expands.size() != blocks) {
    arch_error("expected " + std::to_string(blocks) + " per-block kernel and expand choices");
  }
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const auto& st = space.stages[s];
    if (!contains(st.depth_choices, arch.depths[s])) {
      arch_error("stage " + std::to_string(s) + " depth " + std::to_string(arch.depths[s]) + " not in choice set");
    }
    const std::size_t off = space.block_offset(s);
    for (int b = 0; b < st.max_depth(); ++b) {
      const int k = arch.kernels[off + b], e = arch.expands[off + b];
      if (!contains(st.kernel_choices, k)) {
        arch_error("stage " + std::to_string(s) + " block " + std::to_string(b) + " kernel " + std::to_string(k) + " not in choice set");
      }
      if (!contains(st.expand_choices, e)) {
        arch_error("stage " + std::to_string(s) + " block " + std::to_string(b) + " expand " + std::to_string(e) + " not in choice set");
      }
    }
  }
}

bool is_valid_arch(const SearchSpace& space, const ArchConfig& arch) {
  try {
    validate_arch(space, arch);
    return true;
  } catch (const ArchError&) {
    return false;
  }
}

namespace {

// pick(choices) selects one value from a choice set; wpick selects the width index.
template <class Pick, class WidthPick>
ArchConfig build_arch(const SearchSpace& space, Pick&& pick, WidthPick&& wpick) {
  ArchConfig a;
  a.width_index = wpick(space.width_labels.size());
  for (const auto& st : space.stages) {
    a.depths.push_back(pick(st.depth_choices));
    for (int b = 0; b < st.max_depth(); ++b) {
      a.kernels.push_back(pick(st.kernel_choices));
      a.expands.push_back(pick(st.expand_choices));
    }
  }
  return a;
}

}  // namespace

ArchConfig sample_uniform(const SearchSpace& space, Rng& rng) {
  return build_arch(
      space, [&](const std::vector<int>& c) { return c[uniform_index(rng, c.size())]; },
      [&](std::size_t n) { return static_cast<int>(uniform_index(rng, n)); });
}

ArchConfig largest(const SearchSpace& space) {
  return build_arch(
      space, [](const std::vector<int>& c) { return c.back(); }, [](std::size_t n) { return static_cast<int>(n - 1); });
}

ArchConfig smallest(const SearchSpace& space) {
  return build_arch(
      space, [](const std::vector<int>& c) { return c.front(); }, [](std::size_t) { return 0; });
}

ArchConfig medium(const SearchSpace& space) {
  return build_arch(
      space, [](const std::vector<int>& c) { return c[c.size() / 2]; },
      [](std::size_t n) { return static_cast<int>((n - 1) / 2); });
}

ArchConfig canonical(const SearchSpace& space, const ArchConfig& arch) {
  ArchConfig c = arch;
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const auto& st = space.stages[s];
    const std::size_t off = space.block_offset(s);
    for (int b = arch.depths[s]; b < st.max_depth(); ++b) {
      c.kernels[off + b] = st.kernel_choices.front();
      c.expands[off + b] = st.expand_choices.front();
    }
  }
  return c;
}

void enumerate_archs(const SearchSpace& space, const std::function<void(const ArchConfig&)>& visit) {
  // Per stage: every (depth, active choices) combination in canonical form.
  struct StageChoice {
    int depth;
    std::vector<int> kernels, expands;
  };
  std::vector<std::vector<StageChoice>> per_stage;
  for (const auto& st : space.stages) {
    std::vector<StageChoice> options;
    const std::size_t nk = st.kernel_choices.size(), ne = st.expand_choices.size();
    for (int d : st.depth_choices) {
      std::size_t combos = 1;
      for (int b = 0; b < d; ++b) combos *= nk * ne;
      for (std::size_t code = 0; code < combos; ++code) {
        StageChoice c{d, std::vector<int>(st.max_depth(), st.kernel_choices.front()),
                      std::vector<int>(st.max_depth(), st.expand_choices.front())};
        std::size_t rest = code;
        for (int b = 0; b < d; ++b) {
          c.kernels[b] = st.kernel_choices[rest % nk];
          rest /= nk;
          c.expands[b] = st.expand_choices[rest % ne];
          rest /= ne;
        }
        options.push_back(std::move(c));
      }
    }
    per_stage.push_back(std::move(options));
  }
  std::vector<std::size_t> idx(per_stage.size(), 0);
  for (std::size_t w = 0; w < space.width_labels.size(); ++w) {
    std::fill(idx.begin(), idx.end(), 0);
    while (true) {
      ArchConfig a;
      a.width_index = static_cast<int>(w);
      for (std::size_t s = 0; s < per_stage.size(); ++s) {
        const auto& c = per_stage[s][idx[s]];
        a.depths.push_back(c.depth);
        a.kernels.insert(a.kernels.end(), c.kernels.begin(), c.kernels.end());
        a.expands.insert(a.expands.end(), c.expands.begin(), c.expands.end());
      }
      visit(a);
      bool done = true;
      for (std::size_t s = per_stage.size(); s-- > 0;) {
        if (++idx[s] < per_stage[s].size()) {
          done = false;
          break;
        }
        idx[s] = 0;
      }
      if (done) break;
    }
  }
}

std::string encode(const ArchConfig& arch) {
  return "w" + std::to_string(arch.width_index) + "|d" + join(arch.depths) + "|k" + join(arch.kernels) + "|e" +
         join(arch.expands);
}

ArchConfig decode(std::string_view text, const SearchSpace& space) {
  const auto parts = split(text, '|');
  if (parts.size() != 4) throw ArchError("decode: expected 4 '|'-separated fields in '" + std::string(text) + "'");
  const char tags[4] = {'w', 'd', 'k', 'e'};
  for (int i = 0; i < 4; ++i) {
    if (parts[i].empty() || parts[i][0] != tags[i]) {
      throw ArchError(std::string("decode: field ") + std::to_string(i) + " must start with '" + tags[i] + "'");
    }
  }
  ArchConfig a;
  try {
    a.width_index = parse_int(std::string_view(parts[0]).substr(1), "width");
    a.depths = parse_int_list(std::string_view(parts[1]).substr(1), "depths");
    a.kernels = parse_int_list(std::string_view(parts[2]).substr(1), "kernels");
    a.expands = parse_int_list(std::string_view(parts[3]).substr(1), "expands");
  } catch (const SpaceError& e) {
    throw ArchError(std::string("decode: ") + e.what());
  }
  validate_arch(space, a);
  return a;
}

// ---- geometry and resources -----------------------------------------------------

BlockGeometry first_block_geometry(const SearchSpace& space) {
  const auto& f = space.first_block;
  const int in = space.stem.out;
  return BlockGeometry{in, in * f.expand, f.out, f.kernel, f.stride, f.expand != 1, in == f.out && f.stride == 1};
}

int stages_input_channels(const SearchSpace& space) {
  return space.first_block.out > 0 ? space.first_block.out : space.stem.out;
}

int stages_output_channels(const SearchSpace& space, int width_index) {
  return space.stages.back().width_choices[static_cast<std::size_t>(width_index)];
}

std::vector<BlockGeometry> active_blocks(const SearchSpace& space, const ArchConfig& arch) {
  std::vector<BlockGeometry> out;
  int in = stages_input_channels(space);
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const auto& st = space.stages[s];
    const int width = st.width_choices[static_cast<std::size_t>(arch.width_index)];
    const std::size_t off = space.block_offset(s);
    for (int b = 0; b < arch.depths[s]; ++b) {
      BlockGeometry g;
      g.in = in;
      g.mid = in * arch.expands[off + b];
      g.out = width;
      g.kernel = arch.kernels[off + b];
      g.stride = b == 0 ? st.stride : 1;
      g.expand_conv = arch.expands[off + b] != 1;
      g.residual = b > 0;
      out.push_back(g);
      in = width;
    }
  }
  return out;
}

namespace {

std::int64_t conv_out(std::int64_t size, int k, int stride) { return (size + 2 * (k / 2) - k) / stride + 1; }

}  // namespace

ResourceReport count_resources(const SearchSpace& space, const ArchConfig& arch, int resolution,
                               const LatencyModel& latency) {
  validate_arch(space, arch);
  std::int64_t size = resolution > 0 ? resolution : space.resolution;
  std::int64_t flops = 0, params = 0;
  // conv without bias followed by normalization (scale + shift per channel)
  auto conv = [&](std::int64_t in, std::int64_t out, int k, int stride, int groups, bool norm) {
    size = conv_out(size, k, stride);
    flops += 2 * size * size * out * (in / groups) * k * k;
    params += out * (in / groups) * k * k + (norm ? 2 * out : 0);
  };
  auto block = [&](const BlockGeometry& g) {
    if (g.expand_conv) conv(g.in, g.mid, 1, 1, 1, true);
    conv(g.mid, g.mid, g.kernel, g.stride, static_cast<int>(g.mid), true);
    conv(g.mid, g.out, 1, 1, 1, true);
  };

  conv(space.in_channels, space.stem.out, space.stem.kernel, space.stem.stride, 1, true);
  if (space.first_block.out > 0) {
    block(first_block_geometry(space));
  }
  for (const auto& g : active_blocks(space, arch)) block(g);
  std::int64_t channels = stages_output_channels(space, arch.width_index);
  if (space.final_conv > 0) {
    conv(channels, space.final_conv, 1, 1, 1, true);
    channels = space.final_conv;
  }
  size = 1;  // global pooling
  if (space.feature_mix > 0) {
    conv(channels, space.feature_mix, 1, 1, 1, false);
    channels = space.feature_mix;
  }
  flops += 2 * channels * space.classes;
  params += channels * space.classes + space.classes;

  ResourceReport r;
  r.flops = flops;
  r.params = params;
  r.latency_proxy = latency.ms_per_gflop * static_cast<double>(flops) * 1e-9 + latency.offset_ms;
  return r;
}

}  // namespace enas
