// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/checkpoint.hpp"
#include "segkit/detect.hpp"
#include "segkit/gradcheck.hpp"
#include "segkit/metrics.hpp"
#include "segkit/model.hpp"
#include "segkit/nifti.hpp"
#include "segkit/phantom.hpp"
#include "segkit/raw_io.hpp"
#include "segkit/train.hpp"

using namespace segkit;
using ad::Graph;
using ad::NodeId;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void report(int criterion, const char* name, bool pass, double secs) {
  std::printf("[%d] %-22s %s (%.1fs)\n", criterion, name, pass ? "PASS" : "FAIL", secs);
  std::fflush(stdout);
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::uint64_t seed, T lo = T{-1}, T hi = T{1}) {
  Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  for (auto& v : t.data) {
    v = lo + (hi - lo) * static_cast<T>(static_cast<double>(rng() >> 11) * 0x1.0p-53);
  }
  return t;
}

fs::path work_dir() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "segkit_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("criterion 1: gradient suite") {
  Timer timer;
  double worst_op = 0.0;
  auto probe = [&](double err) { worst_op = std::max(worst_op, err); };

  const auto x5 = random_tensor<double>({1, 3, 4, 4, 4}, 1);
  const auto pair = random_tensor<double>({1, 3, 4, 4, 4}, 2);
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) { return ad::sum(g, ad::add(g, in, g.input(pair))); }, x5,
      1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) { return ad::sum(g, ad::mul(g, in, g.input(pair))); }, x5,
      1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) { return ad::sum(g, ad::mul(g, in, in)); }, x5, 1e-6));
  const auto away = random_tensor<double>({1, 3, 4, 4, 4}, 3, 0.1, 1.0);
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) { return ad::sum(g, ad::relu(g, in)); }, away, 1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId s = ad::sigmoid(g, in);
        return ad::sum(g, ad::mul(g, s, s));
      },
      x5, 1e-6));

  const auto w = random_tensor<double>({2, 3, 3, 3, 3}, 4);
  const auto b = random_tensor<double>({2}, 5);
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::conv3d(g, in, g.input(w), g.input(b), 2, 1);
        return ad::sum(g, ad::mul(g, y, y));
      },
      x5, 1e-5));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::conv3d(g, g.input(x5), in, g.input(b), 1, 1);
        return ad::sum(g, ad::mul(g, y, y));
      },
      w, 1e-5));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::conv3d(g, g.input(x5), g.input(w), in, 1, 1);
        return ad::sum(g, ad::mul(g, y, y));
      },
      b, 1e-5));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::maxpool3d(g, in, 2, 2);
        return ad::sum(g, ad::mul(g, y, y));
      },
      random_tensor<double>({1, 2, 4, 4, 4}, 6), 1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::upsample_trilinear(g, in, 2);
        return ad::sum(g, ad::mul(g, y, y));
      },
      random_tensor<double>({1, 2, 3, 2, 3}, 7), 1e-6));
  const auto coeff = random_tensor<double>({1, 1, 4, 4, 4}, 8);
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::mul_broadcast(g, in, g.input(coeff));
        return ad::sum(g, ad::mul(g, y, y));
      },
      x5, 1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::mul_broadcast(g, g.input(x5), in);
        return ad::sum(g, ad::mul(g, y, y));
      },
      coeff, 1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::concat_channels(g, in, g.input(pair));
        return ad::sum(g, ad::mul(g, y, y));
      },
      x5, 1e-6));
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const NodeId y = ad::softmax_channels(g, in);
        return ad::sum(g, ad::mul(g, y, y));
      },
      random_tensor<double>({1, 4, 3, 3, 3}, 9, -2.0, 2.0), 1e-6));
  Tensor<double> onehot({1, 3, 4, 4, 4});
  {
    std::mt19937_64 rng(10);
    for (std::int64_t v = 0; v < 64; ++v) {
      onehot.data[static_cast<std::size_t>((rng() % 3) * 64 + static_cast<std::uint64_t>(v))] = 1.0;
    }
  }
  probe(finite_diff_check(
      [&](Graph<double>& g, NodeId in) { return ad::dice_loss(g, in, g.input(onehot)); },
      random_tensor<double>({1, 3, 4, 4, 4}, 11, 0.05, 0.95), 1e-6));

  // whole toy model: depth 2, base 2, 8^3 input
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.seed = 19;
  const auto ckpt = build_model(cfg);
  Tensor<double> target({1, 4, 8, 8, 8});
  {
    std::mt19937_64 rng(20);
    for (std::int64_t v = 0; v < 512; ++v) {
      target.data[static_cast<std::size_t>((rng() % 4) * 512 + static_cast<std::uint64_t>(v))] = 1.0;
    }
  }
  const double model_err = finite_diff_check(
      [&](Graph<double>& g, NodeId in) {
        const auto pids = add_params_to_graph(ckpt, g);
        return ad::dice_loss(g, forward_graph(ckpt, g, in, pids), g.input(target));
      },
      random_tensor<double>({1, 4, 8, 8, 8}, 23, 0.0, 1.0), 1e-4, 100, 3);

  const double secs = timer.seconds();
  const bool pass = worst_op < 1e-4 && model_err < 1e-3 && secs <= 120.0;
  report(1, "gradient suite", pass, secs);
  CHECK(worst_op < 1e-4);
  CHECK(model_err < 1e-3);
  CHECK(secs <= 120.0);
}

TEST_CASE("criterion 2: dice loss suite") {
  Timer timer;
  Tensor<double> t({1, 2, 1, 1, 4});
  t.data = {0, 1, 0, 1, 1, 0, 1, 0};
  Graph<double> g1;
  const double perfect = g1.value(ad::dice_loss(g1, g1.input(t), g1.input(t))).data[0];

  Tensor<double> flipped = t;
  for (auto& v : flipped.data) v = 1.0 - v;
  Graph<double> g2;
  const double disjoint = g2.value(ad::dice_loss(g2, g2.input(flipped), g2.input(t))).data[0];

  Tensor<double> ps({1, 1, 1, 1, 2}, {0.5, 0.5});
  Tensor<double> ts({1, 1, 1, 1, 2}, {1.0, 0.0});
  Graph<double> g3;
  const double scalar = g3.value(ad::dice_loss(g3, g3.input(ps), g3.input(ts))).data[0];

  const auto p = random_tensor<double>({1, 4, 2, 2, 2}, 31, 0.0, 1.0);
  Tensor<double> oh({1, 4, 2, 2, 2});
  {
    std::mt19937_64 rng(32);
    for (std::int64_t v = 0; v < 8; ++v) {
      oh.data[static_cast<std::size_t>((rng() % 4) * 8 + static_cast<std::uint64_t>(v))] = 1.0;
    }
  }
  Graph<double> g4;
  const double loss = g4.value(ad::dice_loss(g4, g4.input(p), g4.input(oh))).data[0];
  const double complement_gap = std::abs(soft_dice(p, oh) - (1.0 - loss));

  const bool pass = perfect <= 1e-6 && disjoint >= 1.0 - 1e-5 &&
                    std::abs(scalar - (1.0 - 1.0 / 1.5)) <= 1e-5 && complement_gap <= 1e-6;
  report(2, "dice loss suite", pass, timer.seconds());
  CHECK(perfect <= 1e-6);
  CHECK(disjoint >= 1.0 - 1e-5);
  CHECK(std::abs(scalar - (1.0 - 1.0 / 1.5)) <= 1e-5);
  CHECK(complement_gap <= 1e-6);
}

TEST_CASE("criterion 3: attention gate suite") {
  Timer timer;
  const int C = 3, Cg = 6, Ci = 2;
  const auto x = random_tensor<double>({1, C, 4, 4, 4}, 41);
  const auto gt = random_tensor<double>({1, Cg, 2, 2, 2}, 42);

  auto saturated = [&](double bias) {
    Graph<double> g;
    const NodeId wx = g.input(Tensor<double>({Ci, C, 1, 1, 1}));
    const NodeId bx = g.input(Tensor<double>({Ci}));
    const NodeId wg = g.input(Tensor<double>({Ci, Cg, 1, 1, 1}));
    const NodeId bg = g.input(Tensor<double>({Ci}));
    const NodeId wpsi = g.input(Tensor<double>({1, Ci, 1, 1, 1}));
    const NodeId bpsi = g.input(Tensor<double>({1}, {bias}));
    return g.value(attention_gate(g, g.input(x), g.input(gt), wx, bx, wg, bg, wpsi, bpsi)).data;
  };
  double open_gap = 0.0, closed_gap = 0.0;
  const auto open = saturated(20.0);
  const auto closed = saturated(-20.0);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    open_gap = std::max(open_gap, std::abs(open[i] - x.data[i]));
    closed_gap = std::max(closed_gap, std::abs(closed[i]));
  }

  // randomly parameterized gate vs explicit primitive composition
  const auto wx = random_tensor<double>({Ci, C, 1, 1, 1}, 43);
  const auto bx = random_tensor<double>({Ci}, 44);
  const auto wg = random_tensor<double>({Ci, Cg, 1, 1, 1}, 45);
  const auto bg = random_tensor<double>({Ci}, 46);
  const auto wpsi = random_tensor<double>({1, Ci, 1, 1, 1}, 47);
  const auto bpsi = random_tensor<double>({1}, 48);
  Graph<double> g;
  const auto gate_out = g.value(attention_gate(g, g.input(x), g.input(gt), g.input(wx),
                                               g.input(bx), g.input(wg), g.input(bg),
                                               g.input(wpsi), g.input(bpsi)))
                            .data;
  Graph<double> o;
  const NodeId xs = ad::conv3d(o, o.input(x), o.input(wx), o.input(bx), 2, 0);
  const NodeId gm = ad::conv3d(o, o.input(gt), o.input(wg), o.input(bg), 1, 0);
  const NodeId a = ad::sigmoid(
      o, ad::conv3d(o, ad::relu(o, ad::add(o, xs, gm)), o.input(wpsi), o.input(bpsi), 1, 0));
  const auto oracle =
      o.value(ad::mul_broadcast(o, o.input(x), ad::upsample_trilinear(o, a, 2))).data;

  const bool pass = open_gap <= 1e-5 && closed_gap <= 1e-5 && gate_out == oracle;
  report(3, "attention gate suite", pass, timer.seconds());
  CHECK(open_gap <= 1e-5);
  CHECK(closed_gap <= 1e-5);
  CHECK(gate_out == oracle);
}

TEST_CASE("criterion 4: phantom detection suite") {
  Timer timer;
  DetectParams p;
  p.equalize = false;
  p.thresh = 0.6f;
  p.area_thresh = 12;
  p.dilation_radius = 1;

  int contained = 0;
  int no_tumor_errors = 0;
  for (int seed = 1; seed <= 50; ++seed) {
    auto [mm, labels] = generate_phantom(static_cast<std::uint64_t>(seed), {40, 40, 40}, 9, 5);
    std::int64_t blob = 0;
    for (auto l : labels.labels) blob += l != 0;
    REQUIRE(blob >= 500);
    try {
      const auto res = detect_tumor_volume(mm.modalities[kModalityFlair], p);
      std::int64_t inside = 0;
      for (int z = 0; z < 40; ++z)
        for (int y = 0; y < 40; ++y)
          for (int x = 0; x < 40; ++x) {
            if (labels.at(z, y, x) && res.bbox.contains({z, y, x})) ++inside;
          }
      if (static_cast<double>(inside) >= 0.99 * static_cast<double>(blob)) ++contained;
    } catch (const no_tumor_error&) {
      ++no_tumor_errors;
    }
  }
  const double secs = timer.seconds();
  const bool pass = contained == 50 && no_tumor_errors == 0 && secs <= 60.0;
  report(4, "phantom detection", pass, secs);
  CHECK(contained == 50);
  CHECK(no_tumor_errors == 0);
  CHECK(secs <= 60.0);
}

namespace {

void flood(const BinaryMask2D& m, std::vector<int>& labels, int r, int c, int lab) {
  if (r < 0 || r >= m.height || c < 0 || c >= m.width) return;
  const std::size_t i = static_cast<std::size_t>(r) * m.width + c;
  if (!m.bits[i] || labels[i]) return;
  labels[i] = lab;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) flood(m, labels, r + dr, c + dc, lab);
}

}  // namespace

TEST_CASE("criterion 5: oracle equivalence") {
  Timer timer;
  bool pass = true;
  std::mt19937_64 rng(51);
  auto random_bits = [&](BinaryMask2D& m, double density) {
    for (auto& b : m.bits) b = (static_cast<double>(rng() >> 11) * 0x1.0p-53) < density ? 1 : 0;
  };

  // connected components vs recursive flood fill, 100 random 64^2 masks
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask2D m(64, 64);
    random_bits(m, 0.25);
    std::vector<int> labels(m.bits.size(), 0);
    int next = 0;
    std::vector<std::int64_t> areas;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * 64 + c;
        if (m.bits[i] && !labels[i]) {
          flood(m, labels, r, c, ++next);
          areas.push_back(0);
        }
      }
    for (int lab : labels) {
      if (lab) ++areas[static_cast<std::size_t>(lab - 1)];
    }
    const auto cm = label_components(m);
    pass = pass && cm.objects.size() == static_cast<std::size_t>(next) && cm.labels == labels;
    for (std::size_t k = 0; k < cm.objects.size() && pass; ++k) {
      pass = cm.objects[k].area == areas[k];
    }
  }
  CHECK(pass);

  // dilation vs brute-force max filter
  bool dilate_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask2D m(24, 24);
    random_bits(m, 0.1);
    const int radius = 1 + trial % 4;
    const auto d = dilate(m, radius);
    for (int r = 0; r < 24 && dilate_ok; ++r)
      for (int c = 0; c < 24 && dilate_ok; ++c) {
        std::uint8_t expect = 0;
        for (int dr = -radius; dr <= radius && !expect; ++dr)
          for (int dc = -radius; dc <= radius && !expect; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < 24 && cc >= 0 && cc < 24 && m.at(rr, cc)) expect = 1;
          }
        dilate_ok = d.at(r, c) == expect;
      }
  }
  CHECK(dilate_ok);

  // conv3d / maxpool3d / trilinear vs naive loops on 20 random shapes
  bool tensor_ok = true;
  for (int trial = 0; trial < 20 && tensor_ok; ++trial) {
    const int Ci = 1 + static_cast<int>(rng() % 2);
    const int Co = 1 + static_cast<int>(rng() % 2);
    const int D = 3 + static_cast<int>(rng() % 3);
    const int H = 3 + static_cast<int>(rng() % 3);
    const int W = 3 + static_cast<int>(rng() % 3);
    const auto x = random_tensor<float>({1, Ci, D, H, W}, rng());
    const auto w = random_tensor<float>({Co, Ci, 3, 3, 3}, rng());
    const auto b = random_tensor<float>({Co}, rng());
    Graph<float> g;
    const NodeId conv = ad::conv3d(g, g.input(x), g.input(w), g.input(b), 1, 1);
    const auto& cv = g.value(conv);
    auto xat = [&](int ci, int z, int y, int xx) -> float {
      if (z < 0 || z >= D || y < 0 || y >= H || xx < 0 || xx >= W) return 0.0f;
      return x.data[static_cast<std::size_t>(((static_cast<std::int64_t>(ci) * D + z) * H + y) * W + xx)];
    };
    std::size_t oi = 0;
    for (int co = 0; co < Co && tensor_ok; ++co)
      for (int z = 0; z < D && tensor_ok; ++z)
        for (int y = 0; y < H && tensor_ok; ++y)
          for (int xx = 0; xx < W && tensor_ok; ++xx, ++oi) {
            float acc = b.data[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < Ci; ++ci)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    acc += w.data[static_cast<std::size_t>(
                               (((static_cast<std::int64_t>(co) * Ci + ci) * 3 + kz) * 3 + ky) * 3 + kx)] *
                           xat(ci, z + kz - 1, y + ky - 1, xx + kx - 1);
                  }
            tensor_ok = std::abs(cv.data[oi] - acc) <= 1e-5f;
          }
    if (!tensor_ok) break;

    // maxpool oracle
    Graph<float> g2;
    const auto& pooled = g2.value(ad::maxpool3d(g2, g2.input(x), 2, 2));
    const int Do = (D - 2) / 2 + 1, Ho = (H - 2) / 2 + 1, Wo = (W - 2) / 2 + 1;
    oi = 0;
    for (int ci = 0; ci < Ci && tensor_ok; ++ci)
      for (int oz = 0; oz < Do; ++oz)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox, ++oi) {
            float best = -1e30f;
            for (int kz = 0; kz < 2; ++kz)
              for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx) {
                  best = std::max(best, xat(ci, oz * 2 + kz, oy * 2 + ky, ox * 2 + kx));
                }
            tensor_ok = tensor_ok && pooled.data[oi] == best;
          }

    // trilinear oracle with explicit align-corners sampling
    Graph<float> g3;
    const auto& up = g3.value(ad::upsample_trilinear(g3, g3.input(x), 2));
    auto axis = [](int i, int src, int dst) {
      const double f = dst > 1 ? static_cast<double>(i) * (src - 1) / (dst - 1) : 0.0;
      const int i0 = std::min(static_cast<int>(f), src - 1);
      return std::pair<int, double>{i0, f - i0};
    };
    oi = 0;
    for (int ci = 0; ci < Ci && tensor_ok; ++ci)
      for (int oz = 0; oz < 2 * D; ++oz)
        for (int oy = 0; oy < 2 * H; ++oy)
          for (int ox = 0; ox < 2 * W; ++ox, ++oi) {
            const auto [z0, fz] = axis(oz, D, 2 * D);
            const auto [y0, fy] = axis(oy, H, 2 * H);
            const auto [x0, fx] = axis(ox, W, 2 * W);
            const int z1 = std::min(z0 + 1, D - 1), y1 = std::min(y0 + 1, H - 1),
                      x1 = std::min(x0 + 1, W - 1);
            double acc = 0.0;
            for (int dz = 0; dz <= 1; ++dz)
              for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx) {
                  const double wgt = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                  acc += wgt * xat(ci, dz ? z1 : z0, dy ? y1 : y0, dx ? x1 : x0);
                }
            tensor_ok = tensor_ok && std::abs(up.data[oi] - static_cast<float>(acc)) <= 1e-5f;
          }
  }
  CHECK(tensor_ok);

  // region metrics vs per-voxel tallies, exact integer counts
  bool metrics_ok = true;
  for (int trial = 0; trial < 20 && metrics_ok; ++trial) {
    LabelVolume pred({8, 8, 8}), truth({8, 8, 8});
    for (auto& l : pred.labels) l = static_cast<std::uint8_t>(rng() % 4);
    for (auto& l : truth.labels) l = static_cast<std::uint8_t>(rng() % 4);
    for (Region r : {Region::kWT, Region::kTC, Region::kET}) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool pv = in_region(pred.labels[i], r);
        const bool tv = in_region(truth.labels[i], r);
        tp += pv && tv;
        fp += pv && !tv;
        fn += !pv && tv;
        tn += !pv && !tv;
      }
      const auto c = confusion(pred, truth, r);
      metrics_ok = metrics_ok && c.tp == tp && c.fp == fp && c.fn == fn && c.tn == tn;
    }
  }
  CHECK(metrics_ok);

  report(5, "oracle equivalence", pass && dilate_ok && tensor_ok && metrics_ok, timer.seconds());
}

TEST_CASE("criterion 6: overfit integration") {
  Timer timer;
  std::vector<TrainSample> samples;
  for (int i = 0; i < 4; ++i) {
    auto [mm, labels] = generate_phantom(1000 + static_cast<std::uint64_t>(i), {32, 32, 32}, 8, 3);
    TrainSample s;
    s.input = ChannelStack(4, {32, 32, 32});
    for (int c = 0; c < 4; ++c) {
      const auto v = minmax_normalize(mm.modalities[static_cast<std::size_t>(c)]);
      std::copy(v.data.begin(), v.data.end(),
                s.input.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * v.data.size()));
    }
    s.target = std::move(labels);
    samples.push_back(std::move(s));
  }

  ModelConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 4;
  cfg.seed = 7;
  auto ckpt = build_model(cfg);
  TrainPlan plan;
  plan.rounds = {{75, 1}, {75, 1}};  // two rounds, 150 epochs total
  plan.lr = 1e-4f;
  plan.seed = 7;
  train(ckpt, samples, plan);
  REQUIRE(ckpt.history.size() == 150);

  double dice_sum = 0.0;
  for (const auto& s : samples) {
    Tensor<float> batch({1, 4, 32, 32, 32}, s.input.data);
    const auto probs = forward(ckpt, batch);
    const auto oh = one_hot(s.target, 4);
    Tensor<float> target({1, 4, 32, 32, 32}, oh.data);
    dice_sum += soft_dice(probs, target);
  }
  const double mean_dice = dice_sum / 4.0;
  const double secs = timer.seconds();
  const bool pass = mean_dice >= 0.90 && secs <= 600.0;
  std::printf("    overfit mean foreground soft dice: %.4f\n", mean_dice);
  report(6, "overfit integration", pass, secs);
  CHECK(mean_dice >= 0.90);
  CHECK(secs <= 600.0);
}

TEST_CASE("criterion 7: format round trips") {
  Timer timer;
  const fs::path dir = work_dir() / "formats";
  fs::create_directories(dir);

  // NIfTI float32 bit-exact
  Volume3D v({5, 6, 7});
  std::mt19937_64 rng(71);
  for (auto& x : v.data) x = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2 - 1);
  const auto nifti_path = (dir / "v.nii").string();
  write_nifti(v, nifti_path);
  const auto [nback, nmeta] = read_nifti(nifti_path);
  const bool nifti_ok = nback.dims == v.dims &&
                        std::memcmp(nback.data.data(), v.data.data(),
                                    v.data.size() * sizeof(float)) == 0;

  // VOL1 bit-exact
  ChannelStack s(4, {3, 4, 5});
  for (auto& x : s.data) x = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53);
  const auto vol_path = (dir / "s.vol1").string();
  write_raw(s, vol_path);
  const auto sback = read_raw(vol_path);
  const bool vol_ok = sback.channels == s.channels && sback.dims == s.dims &&
                      std::memcmp(sback.data.data(), s.data.data(),
                                  s.data.size() * sizeof(float)) == 0;

  // checkpoint round trip preserves the forward pass exactly
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.seed = 73;
  const auto ckpt = build_model(cfg);
  const auto ck_path = (dir / "m.aunc").string();
  save_checkpoint(ckpt, ck_path);
  const auto loaded = load_checkpoint(ck_path);
  const auto batch = random_tensor<float>({1, 4, 8, 8, 8}, 74, 0.0f, 1.0f);
  const bool ckpt_ok = forward(loaded, batch).data == forward(ckpt, batch).data;

  // byte-swapped fixture decodes identically to its little-endian twin
  auto emit = [&](bool big_endian) {
    std::vector<std::uint8_t> buf(352, 0);
    auto put = [&](std::size_t off, auto value) {
      std::uint8_t bytes[sizeof(value)];
      std::memcpy(bytes, &value, sizeof(value));
      if (big_endian) std::reverse(bytes, bytes + sizeof(value));
      std::memcpy(&buf[off], bytes, sizeof(value));
    };
    put(0, std::int32_t{348});
    put(40, std::int16_t{3});
    for (std::size_t i = 1; i <= 7; ++i) put(40 + 2 * i, static_cast<std::int16_t>(i <= 3 ? 2 : 1));
    put(70, std::int16_t{4});  // int16 payload
    put(76, 1.0f);
    put(80, 1.0f);
    put(84, 1.0f);
    put(88, 1.0f);
    put(108, 352.0f);
    put(112, 1.0f);
    std::memcpy(&buf[344], "n+1\0", 4);
    for (int i = 0; i < 8; ++i) {
      buf.resize(buf.size() + 2);
      std::int16_t value = static_cast<std::int16_t>(100 + 7 * i);
      std::uint8_t bytes[2];
      std::memcpy(bytes, &value, 2);
      if (big_endian) std::swap(bytes[0], bytes[1]);
      std::memcpy(&buf[buf.size() - 2], bytes, 2);
    }
    const fs::path p = dir / (big_endian ? "be.nii" : "le.nii");
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    return p.string();
  };
  const auto [le, le_meta] = read_nifti(emit(false));
  const auto [be, be_meta] = read_nifti(emit(true));
  const bool swap_ok = !le_meta.byte_swapped && be_meta.byte_swapped && le.dims == be.dims &&
                       le.data == be.data;

  const bool pass = nifti_ok && vol_ok && ckpt_ok && swap_ok;
  report(7, "format round trips", pass, timer.seconds());
  CHECK(nifti_ok);
  CHECK(vol_ok);
  CHECK(ckpt_ok);
  CHECK(swap_ok);
}

TEST_CASE("criterion 8: pipeline determinism") {
  Timer timer;
  const std::string bin = SEGKIT_BIN;
  const fs::path root = work_dir() / "determinism";
  fs::create_directories(root);
  const fs::path dataset = root / "dataset";
  auto shell = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " > " + (root / "cmd.log").string() + " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  REQUIRE(shell("phantom --output " + dataset.string() +
                " --count 3 --seed 500 --dim 32 --radius 8 --specks 3") == 0);

  auto run_pipeline = [&](const fs::path& out) {
    nlohmann::json cfg{
        {"dataset_root", dataset.string()},
        {"output_dir", out.string()},
        {"seed", 7},
        {"threads", 1},
        {"train_fraction", 0.67},
        {"detect",
         {{"mode", "fixed"}, {"thresh", 0.6}, {"area_thresh", 12}, {"dilation_radius", 1},
          {"equalize", false}, {"modality", "flair"}}},
        {"preprocess", {{"target_size", {16, 16, 16}}, {"crop_margin", 2}}},
        {"model", {{"depth", 2}, {"base_channels", 2}}},
        {"train",
         {{"rounds", nlohmann::json::array({{{"epochs", 2}, {"batch_size", 2}}})}, {"lr", 1e-3}}}};
    const fs::path cfg_path = root / (out.filename().string() + ".json");
    std::ofstream(cfg_path) << cfg.dump(2);
    REQUIRE(shell("preprocess --config " + cfg_path.string()) == 0);
    REQUIRE(shell("train --config " + cfg_path.string()) == 0);
    REQUIRE(shell("evaluate --config " + cfg_path.string() + " --checkpoint " +
                  (out / "checkpoint.aunc").string()) == 0);
  };
  run_pipeline(root / "a");
  run_pipeline(root / "b");

  bool pass = true;
  for (const char* name :
       {"manifest.json", "detect_report.json", "failures.json", "history.csv", "checkpoint.aunc",
        "checkpoint_round0.aunc", "metrics.csv", "metrics.json", "pre/phantom_0_img.vol1",
        "pre/phantom_0_mask.vol1", "pre/phantom_1_img.vol1", "pre/phantom_2_img.vol1"}) {
    const bool same = slurp(root / "a" / name) == slurp(root / "b" / name);
    if (!same) std::printf("    mismatch: %s\n", name);
    pass = pass && same;
  }
  report(8, "pipeline determinism", pass, timer.seconds());
  CHECK(pass);
}
