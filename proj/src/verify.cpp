#include "xdistill/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "xdistill/anchors.hpp"
#include "xdistill/detector.hpp"
#include "xdistill/geometry.hpp"
#include "xdistill/losses.hpp"
#include "xdistill/random.hpp"
#include "xdistill/scene.hpp"
#include "xdistill/teacher.hpp"

namespace xdistill {
namespace {

constexpr double kPi = std::numbers::pi;

std::size_t scaled(std::size_t n, double scale, std::size_t floor = 10) {
  return std::max(floor, static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale)));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Box3D random_box(Rng& rng) {
  return {uniform(rng, -3.0, 3.0), uniform(rng, -1.0, 1.0), uniform(rng, 5.0, 15.0), uniform(rng, 0.5, 5.0),
          uniform(rng, 0.4, 2.5),  uniform(rng, 0.8, 2.5),  uniform(rng, -kPi, kPi)};
}

Box3D nearby_box(const Box3D& a, Rng& rng) {
  Box3D b = a;
  b.cx += uniform(rng, -1.0, 1.0);
  b.cy += uniform(rng, -0.4, 0.4);
  b.cz += uniform(rng, -1.0, 1.0);
  b.l *= std::exp(uniform(rng, -0.4, 0.4));
  b.w *= std::exp(uniform(rng, -0.4, 0.4));
  b.h *= std::exp(uniform(rng, -0.4, 0.4));
  b.yaw = wrap_angle(b.yaw + uniform(rng, -1.0, 1.0));
  return b;
}

CheckResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

CheckResult iou_mc(double scale) {
  Rng rng = make_rng(101, 1);
  const std::size_t pairs = scaled(200, scale);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < pairs) {
    const Box3D a = random_box(rng);
    const Box3D b = nearby_box(a, rng);
    const double exact = iou3d(a, b);
    if (exact <= 0.05) continue;
    const MonteCarloIou mc = iou3d_mc_oracle(a, b, 100000, done);
    worst = std::max(worst, std::abs(exact - mc.iou));
    ++done;
  }
  return check("iou_mc_agreement", worst <= 0.01, "pairs=" + std::to_string(done) + " max_abs_err=" + fmt(worst));
}

CheckResult iou_closed_forms() {
  const Box3D a{0.3, -0.2, 10.0, 4.0, 1.7, 1.5, 0.4};
  const bool identity = iou3d(a, a) == 1.0;
  const Box3D p{0.0, 0.0, 10.0, 2.0, 1.0, 1.5, 0.0};
  const Box3D q{0.5, 0.25, 10.4, 1.5, 1.2, 1.0, 0.0};
  auto overlap = [](double c1, double s1, double c2, double s2) {
    return std::max(0.0, std::min(c1 + s1 / 2, c2 + s2 / 2) - std::max(c1 - s1 / 2, c2 - s2 / 2));
  };
  // yaw 0 puts the length along x and the width along z.
  const double inter = overlap(p.cx, p.l, q.cx, q.l) * overlap(p.cz, p.w, q.cz, q.w) * overlap(p.cy, p.h, q.cy, q.h);
  const double closed = inter / (p.volume() + q.volume() - inter);
  const double axis_err = std::abs(iou3d(p, q) - closed);
  const Box3D u{0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0};
  Box3D r = u;
  r.yaw = kPi / 4.0;
  const double rot_err = std::abs(iou3d(u, r) - 0.707107);
  return check("iou_closed_forms", identity && axis_err <= 1e-12 && rot_err <= 1e-6,
               "identity=" + std::string(identity ? "1" : "0") + " axis_err=" + fmt(axis_err) +
                   " rot45_err=" + fmt(rot_err));
}

CheckResult iou_symmetry(double scale) {
  Rng rng = make_rng(102, 1);
  std::size_t bad = 0;
  const std::size_t n = scaled(2000, scale);
  for (std::size_t i = 0; i < n; ++i) {
    const Box3D a = random_box(rng);
    const Box3D b = nearby_box(a, rng);
    if (iou3d(a, b) != iou3d(b, a)) ++bad;
  }
  return check("iou_symmetry", bad == 0, "pairs=" + std::to_string(n) + " asymmetric=" + std::to_string(bad));
}

CheckResult codec_roundtrip(double scale) {
  Rng rng = make_rng(103, 1);
  double worst = 0.0;
  const std::size_t n = scaled(2000, scale);
  for (std::size_t i = 0; i < n; ++i) {
    const Box3D anchor = random_box(rng);
    const Box3D box = nearby_box(anchor, rng);
    const Box3D back = decode_box(encode_box(box, anchor), anchor);
    const auto x = box.to_array();
    const auto y = back.to_array();
    for (std::size_t k = 0; k < 6; ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
    worst = std::max(worst, std::abs(wrap_angle(x[6] - y[6])));
  }
  return check("codec_roundtrip", worst <= 1e-9, "boxes=" + std::to_string(n) + " max_abs_err=" + fmt(worst));
}

std::array<double, 3> random_vec(Rng& rng) { return {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)}; }

CheckResult gate_soundness(const VerifyHooks& hooks, double scale) {
  Rng rng = make_rng(104, 1);
  const std::size_t n = scaled(100000, scale);
  const double eps = 1e-9;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<double, 3> s = random_vec(rng);
    std::array<double, 3> t = random_vec(rng), g = random_vec(rng);
    const int mode = static_cast<int>(i % 10);
    if (mode == 0) t = s;
    if (mode == 1) g = s;
    std::array<double, 3> dt{}, dg{};
    double nt = 0.0, ng = 0.0, dot = 0.0;
    for (int k = 0; k < 3; ++k) {
      dt[k] = t[k] - s[k];
      dg[k] = g[k] - s[k];
      nt += dt[k] * dt[k];
      ng += dg[k] * dg[k];
      dot += dt[k] * dg[k];
    }
    bool expected = dot > 0.0;
    if (std::sqrt(nt) < eps) {
      expected = true;
    } else if (std::sqrt(ng) < eps) {
      expected = false;
    }
    if (hooks.gate(dt, dg).kept != expected) ++violations;
  }
  return check("gate_soundness", violations == 0,
               "triplets=" + std::to_string(n) + " violations=" + std::to_string(violations));
}

bool brute_keep(std::span<const double> s, std::span<const double> t, std::span<const double> g, bool angle) {
  double nt = 0.0, ng = 0.0, dot = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double a = angle ? wrap_angle(t[k] - s[k]) : t[k] - s[k];
    const double b = angle ? wrap_angle(g[k] - s[k]) : g[k] - s[k];
    nt += a * a;
    ng += b * b;
    dot += a * b;
  }
  if (std::sqrt(nt) < 1e-9) return true;
  if (std::sqrt(ng) < 1e-9) return false;
  return dot > 0.0;
}

CheckResult algorithm1(double scale) {
  Rng rng = make_rng(105, 1);
  const std::size_t n = scaled(1000, scale);
  std::vector<Box3D> ts, ss, gs;
  for (std::size_t i = 0; i < n; ++i) {
    const Box3D s = random_box(rng);
    Box3D t = nearby_box(s, rng), g = nearby_box(s, rng);
    const int mode = static_cast<int>(i % 8);
    if (mode == 0) t = s;
    if (mode == 1) g = s;
    if (mode == 2) {
      t.cx = s.cx;
      t.cy = s.cy;
      t.cz = s.cz;
    }
    if (mode == 3) g.yaw = s.yaw;
    ts.push_back(t);
    ss.push_back(s);
    gs.push_back(g);
  }
  const ComponentUpdate up = positive_component_update(ts, ss, gs);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = ss[i].to_array(), t = ts[i].to_array(), g = gs[i].to_array();
    std::array<double, 7> want = s;
    if (brute_keep({s.data(), 3}, {t.data(), 3}, {g.data(), 3}, false)) std::copy(t.begin(), t.begin() + 3, want.begin());
    if (brute_keep({s.data() + 3, 3}, {t.data() + 3, 3}, {g.data() + 3, 3}, false)) {
      std::copy(t.begin() + 3, t.begin() + 6, want.begin() + 3);
    }
    want[6] = wrap_angle(brute_keep({s.data() + 6, 1}, {t.data() + 6, 1}, {g.data() + 6, 1}, true) ? t[6] : s[6]);
    if (up.targets[i].to_array() != want) ++mismatches;
  }
  return check("algorithm1_bruteforce", mismatches == 0,
               "triplets=" + std::to_string(n) + " mismatches=" + std::to_string(mismatches));
}

LogitMap random_map(Rng& rng, std::size_t positions, std::size_t k_a, std::size_t k_c, double spread) {
  LogitMap m(positions * k_a, k_a, k_c);
  for (double& v : m.values) v = uniform(rng, -spread, spread);
  return m;
}

std::vector<CheckResult> cld_checks(const VerifyHooks& hooks, double scale) {
  std::vector<CheckResult> out;
  Rng rng = make_rng(106, 1);
  const std::size_t maps = scaled(100, scale);
  double row_err = 0.0, min_kl = 0.0, shift_err = 0.0, grad_err = 0.0;
  for (std::size_t i = 0; i < maps; ++i) {
    const LogitMap t = random_map(rng, 3, 2, 3, 4.0);
    LogitMap s = random_map(rng, 3, 2, 3, 4.0);
    const double tau = uniform(rng, 0.5, 3.0);
    const UnifiedDistribution pt = unified_distribution(t, tau);
    const UnifiedDistribution ps = unified_distribution(s, tau);
    for (std::size_t r = 0; r < ps.rows; ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < ps.width; ++k) sum += ps.p(r, k);
      row_err = std::max(row_err, std::abs(sum - 1.0));
    }
    const double kl = hooks.kl(pt, ps);
    min_kl = std::min(min_kl, kl);

    LogitMap shifted = s;
    for (std::size_t r = 0; r < 3; ++r) {
      const double c = uniform(rng, -50.0, 50.0);
      for (std::size_t k = 0; k < 6; ++k) shifted.values[r * 6 + k] += c;
    }
    shift_err = std::max(shift_err, std::abs(hooks.kl(pt, unified_distribution(shifted, tau)) - kl));

    const LogitMap g = cld_grad(pt, s, tau);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      LogitMap up = s, dn = s;
      up.values[k] += 1e-5;
      dn.values[k] -= 1e-5;
      const double fd = (cld_loss(pt, unified_distribution(up, tau)) - cld_loss(pt, unified_distribution(dn, tau))) / 2e-5;
      num += (fd - g.values[k]) * (fd - g.values[k]);
      den += fd * fd;
    }
    if (den > 0.0) grad_err = std::max(grad_err, std::sqrt(num / den));
  }
  out.push_back(check("cld_row_normalization", row_err <= 1e-12, "max_abs_err=" + fmt(row_err)));
  out.push_back(check("cld_nonnegativity", min_kl >= -1e-12, "min_kl=" + fmt(min_kl)));
  out.push_back(check("cld_shift_invariance", shift_err <= 1e-9, "max_abs_err=" + fmt(shift_err)));
  out.push_back(check("cld_grad_fd", grad_err < 1e-4, "maps=" + std::to_string(maps) + " max_rel_err=" + fmt(grad_err)));

  LogitMap teacher(1, 1, 2), student(1, 1, 2);
  student.values = {std::log(3.0), 0.0};
  const double hand = hooks.kl(unified_distribution(teacher), unified_distribution(student));
  out.push_back(check("cld_hand_example", std::abs(hand - 0.143841) <= 1e-6, "kl=" + fmt(hand)));
  return out;
}

CheckResult xgd_grad(double scale) {
  Rng rng = make_rng(107, 1);
  const std::size_t n = scaled(100, scale);
  double worst = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Box3D anchor = random_box(rng);
    const Box3D target = nearby_box(anchor, rng);
    const BoxDelta delta = encode_box(nearby_box(target, rng), anchor);
    const std::array<Box3D, 1> anchors{anchor}, targets{target};
    const std::array<BoxDelta, 1> deltas{delta};
    const XgdGradient g = xgd_loss_grad(deltas, anchors, targets);
    if (g.non_smooth || xgd_loss(std::array<Box3D, 1>{decode_box(delta, anchor)}, targets) >= 1.0) continue;
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      auto up = delta.to_array(), dn = up;
      up[k] += 1e-4;
      dn[k] -= 1e-4;
      const double fu = xgd_loss(std::array<Box3D, 1>{decode_box(BoxDelta::from_array(up), anchor)}, targets);
      const double fl = xgd_loss(std::array<Box3D, 1>{decode_box(BoxDelta::from_array(dn), anchor)}, targets);
      const double fd = (fu - fl) / 2e-4;
      num += (fd - g.d_delta[0][k]) * (fd - g.d_delta[0][k]);
      den += fd * fd;
    }
    if (den > 0.0) {
      worst = std::max(worst, std::sqrt(num / den));
      ++used;
    }
  }
  return check("xgd_grad_fd", used > 0 && worst < 1e-2, "pairs=" + std::to_string(used) + " max_rel_err=" + fmt(worst));
}

struct TinySetup {
  AnchorGrid grid;
  SceneTargets targets;
  Scene scene;
};

TinySetup tiny_setup(std::uint64_t seed) {
  AnchorGridConfig gc;
  gc.x_range = {-4.0, 4.0};
  gc.z_range = {4.0, 12.0};
  gc.classes = {{3.9, 1.6, 1.56, 0.9}, {0.8, 0.6, 1.73, 0.8}, {1.76, 0.6, 1.73, 0.8}};
  TinySetup t;
  t.grid = build_anchor_grid(gc);
  SceneConfig sc;
  sc.min_count = {1, 1, 0};
  sc.max_count = {1, 1, 1};
  sc.student = {0.2, 0.05, 0.1, 0.0, 0.0};
  t.scene = generate_scene(seed, sc, t.grid);
  TeacherConfig tc;
  tc.noise = {0.1, 0.03, 0.05, 0.0, 0.0};
  AssignConfig ac;
  t.targets = prepare_targets(t.grid, t.scene.gts, teacher_predict(t.scene, t.grid, tc).outputs, ac);
  return t;
}

CheckResult total_grad(double scale) {
  const std::size_t states = scaled(20, scale, 5);
  double worst = 0.0;
  std::size_t used = 0;
  for (std::uint64_t seed = 0; used < states && seed < 10 * states; ++seed) {
    const TinySetup t = tiny_setup(seed);
    DetectorParams p = DetectorParams::initialize(FeatureMap::kDim, t.grid.anchors_per_position(), 3, seed, 0.05, 0.05);
    LossConfig lc;
    lc.xgd = XgdMode::kFull;
    lc.cld = CldMode::kForeground;
    const ModelOutputs out = student_forward(p, t.scene.features, t.grid);
    const XgdTargets frozen = prepare_xgd_targets(out, t.targets, lc);
    LossBreakdown b;
    const OutputGrad og = total_loss_grad(out, t.targets, lc, &frozen, &b);
    if (b.non_smooth > 0) continue;
    const std::vector<double> g = student_backward(p, t.scene.features, og);
    Rng rng = make_rng(seed, 108);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 40; ++k) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);
      const double h = 1e-5;
      DetectorParams up = p, dn = p;
      up.data()[i] += h;
      dn.data()[i] -= h;
      const double fu = total_loss(student_forward(up, t.scene.features, t.grid), t.targets, lc, &frozen).total;
      const double fl = total_loss(student_forward(dn, t.scene.features, t.grid), t.targets, lc, &frozen).total;
      const double fd = (fu - fl) / (2.0 * h);
      num += (fd - g[i]) * (fd - g[i]);
      den += fd * fd;
    }
    if (den == 0.0) continue;
    worst = std::max(worst, std::sqrt(num / den));
    ++used;
  }
  return check("total_grad_fd", used == states && worst < 1e-2,
               "states=" + std::to_string(used) + " max_rel_err=" + fmt(worst));
}

}  // namespace

VerifyHooks default_hooks() {
  VerifyHooks h;
  h.gate = [](std::span<const double> dt, std::span<const double> dg) { return gate_from_differences(dt, dg); };
  h.kl = [](const UnifiedDistribution& t, const UnifiedDistribution& s) { return cld_loss(t, s); };
  return h;
}

std::vector<CheckResult> run_verify_suite(const VerifyHooks& hooks, double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("run_verify_suite: scale must lie in (0, 1]");
  std::vector<CheckResult> out;
  out.push_back(iou_closed_forms());
  out.push_back(iou_symmetry(scale));
  out.push_back(iou_mc(scale));
  out.push_back(codec_roundtrip(scale));
  out.push_back(gate_soundness(hooks, scale));
  out.push_back(algorithm1(scale));
  for (CheckResult& c : cld_checks(hooks, scale)) out.push_back(std::move(c));
  out.push_back(xgd_grad(scale));
  out.push_back(total_grad(scale));
  return out;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  std::size_t passed = 0;
  for (const CheckResult& r : results) {
    passed += r.passed;
    os << nlohmann::json{{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}}.dump() << "\n";
  }
  os << nlohmann::json{{"summary", true}, {"passed", passed}, {"failed", results.size() - passed}}.dump() << "\n";
  return os.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace xdistill
