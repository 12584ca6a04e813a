#include "doctest.h"

#include "gsacp/composite.hpp"
#include "gsacp/grad_check.hpp"
#include "gsacp/io.hpp"
#include "gsacp/metrics.hpp"
#include "gsacp/synthgen.hpp"
#include "gsacp/train.hpp"

#include "oracles.hpp"

#include <filesystem>

using namespace gsacp;
namespace fs = std::filesystem;

namespace {

Image noise_image(int h, int w) {
  Image img;
  ScalarField f(h, w);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = oracle::uniform(0, 1);
  img.channels.push_back(f);
  return img;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gsacp_unit_" + std::to_string(::getpid()) + "_" + name);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("im2col and col2im are adjoint") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 30);
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(18, 30);
  const double lhs = (im2col3x3(x, 5, 6).array() * y.array()).sum();
  const double rhs = (x.array() * col2im3x3(y, 2, 5, 6).array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("detector shapes, determinism and parameter round trip") {
  Architecture arch;
  const ToyDetector a(arch, 5), b(arch, 5), c(arch, 6);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  Eigen::Index total = 0;
  for (const auto& s : a.segments()) {
    CHECK(s.offset == total);
    total += s.size;
  }
  CHECK(total == a.parameter_count());
  const Image img = noise_image(12, 10);
  const auto fwd = a.forward(img);
  CHECK(fwd.features.channels() == arch.widths.back());
  CHECK(fwd.logits.rows() == 12);
  CHECK(fwd.logits.cols() == 10);
  CHECK(fwd.shallow().channels() == arch.widths.front());
  ToyDetector d = c;
  d.set_parameters(a.parameters());
  CHECK((d.forward(img).logits == fwd.logits).all());
  CHECK_THROWS_AS(d.set_parameters(Eigen::VectorXd::Zero(3)), ShapeMismatch);
}

TEST_CASE("detector backward agrees with finite differences") {
  Architecture arch;
  arch.widths = {3, 4, 4};
  const ToyDetector det(arch, 11);
  const Image img = noise_image(8, 9);
  Eigen::MatrixXd gF = Eigen::MatrixXd::Random(4, 72);
  ScalarField gL(8, 9);
  for (Eigen::Index i = 0; i < gL.size(); ++i) gL.data()[i] = oracle::uniform(-1, 1);
  Eigen::MatrixXd gS = Eigen::MatrixXd::Random(3, 72);
  auto eval = [&](const Eigen::VectorXd& p) {
    ToyDetector d = det;
    d.set_parameters(p);
    const auto fwd = d.forward(img);
    const FeatureMap sh = fwd.shallow();
    const double value = (fwd.features.values.array() * gF.array()).sum() + (fwd.logits * gL).sum() + (sh.values.array() * gS.array()).sum();
    const FeatureMap dS(gS, 8, 9);
    return std::make_pair(value, d.backward(fwd, FeatureMap(gF, 8, 9), gL, &dS));
  };
  const auto r = finite_difference_audit(eval, det.parameters());
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("composite loss: total, tape and detach") {
  const Image img = noise_image(12, 12);
  const ToyDetector det(Architecture{}, 3);
  const auto fwd = det.forward(img);
  const PointSet pts{{3, 3}, {8, 9}};
  AffinityParams aff;
  const auto bundle = build_affinity(fwd.features, img, pts, aff);
  CompositeOptions opt;
  opt.ohem.exclusion_radius = 2;
  const auto res = composite_loss<double>(fwd.features, fwd.logits, det.head_weights(), bundle, pts, stop_gradient(bundle.A), opt);
  const auto& c = res.breakdown.components;
  const auto& w = opt.weights;
  CHECK(res.breakdown.total == doctest::Approx(w.w_seed * c.seed + w.lambda_prop * c.prop + w.w_bg * c.bg +
                                               w.w_sparse * c.sparse + w.w_cons * c.cons));
  CHECK_NOTHROW(check_stop_gradient(res.breakdown));
  opt.detach_affinity = true;
  const auto det_res = composite_loss<double>(fwd.features, fwd.logits, det.head_weights(), bundle, pts, stop_gradient(bundle.A), opt);
  CHECK(det_res.breakdown.grad_drift_norm == 0.0);
  CHECK(det_res.breakdown.total == res.breakdown.total);
  bool severed = false;
  for (const auto& e : det_res.breakdown.tape) severed = severed || (e.loss == "prop" && e.severed);
  CHECK(severed);
  CHECK_THROWS_AS(composite_loss<double>(fwd.features, fwd.logits, det.head_weights(), bundle, pts, TargetField{bundle.A, false}, opt),
                  ContractViolation);
}

TEST_CASE("synthetic scenes are deterministic and well formed") {
  SceneSpec spec;
  const Scene a = generate_scene(spec, 42), b = generate_scene(spec, 42);
  CHECK((a.image.channels[0] == b.image.channels[0]).all());
  CHECK((a.gt == b.gt).all());
  CHECK(a.points == b.points);
  CHECK(a.points.size() == a.targets.size());
  CHECK(static_cast<int>(a.targets.size()) >= spec.targets_min);
  CHECK_NOTHROW(a.image.validate());
  for (const auto& p : a.points) CHECK(a.gt(p.row, p.col) == 1);
  const auto comps = connected_components(a.gt, 8);
  CHECK(comps.size() == a.targets.size());
  const Scene c = generate_scene(spec, 43);
  CHECK((a.image.channels[0] != c.image.channels[0]).any());
}

TEST_CASE("scene spec validation") {
  SceneSpec spec;
  spec.height = 4;
  CHECK_THROWS_AS(spec.validate(), InvalidInput);
  spec = {};
  spec.targets_min = 5;
  spec.targets_max = 2;
  CHECK_THROWS_AS(spec.validate(), InvalidInput);
}

TEST_CASE("dataset round trip through the manifest") {
  const fs::path dir = scratch("dataset");
  SceneSpec spec;
  spec.height = spec.width = 32;
  spec.targets_min = spec.targets_max = 2;
  const Dataset d = generate_dataset(spec, 8, 9, dir);
  CHECK(d.scenes.size() == 8);
  CHECK(d.indices(Split::kVal) == std::vector<std::size_t>{3, 7});
  const Dataset e = load_dataset(dir / "manifest.jsonl");
  CHECK(e.manifest_sha256 == d.manifest_sha256);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK((e.scenes[k].gt == d.scenes[k].gt).all());
    CHECK(e.scenes[k].points == d.scenes[k].points);
    CHECK((e.scenes[k].image.channels[0] - d.scenes[k].image.channels[0]).abs().maxCoeff() <= 1.0 / 65535);
  }
  fs::remove_all(dir);
}

TEST_CASE("pnm, mask, csv and point files round trip") {
  const fs::path dir = scratch("io");
  Image img = noise_image(9, 8);
  io::write_pnm(dir / "a.pgm", img, 16);
  const Image back = io::read_pnm(dir / "a.pgm");
  CHECK((back.channels[0] - img.channels[0]).abs().maxCoeff() <= 0.5 / 65535 + 1e-12);
  io::write_pnm(dir / "b.pgm", img, 8);
  CHECK((io::read_pnm(dir / "b.pgm").channels[0] - img.channels[0]).abs().maxCoeff() <= 0.5 / 255 + 1e-12);
  BinaryMask m = BinaryMask::Zero(9, 8);
  m(2, 3) = 1;
  io::write_mask(dir / "m.pgm", m);
  CHECK((io::read_mask(dir / "m.pgm") == m).all());
  io::write_csv_grid(dir / "g.csv", img.channels[0]);
  CHECK((io::read_csv_grid(dir / "g.csv") == img.channels[0]).all());
  const PointSet pts{{1, 2}, {3, 4}};
  io::write_points(dir / "p.txt", pts);
  CHECK(io::read_points(dir / "p.txt") == pts);
  io::write_text(dir / "bad.pgm", "P5\n2 2\n255\nx");
  CHECK_THROWS_AS(io::read_pnm(dir / "bad.pgm"), io::IoError);
  CHECK_THROWS(io::read_text(dir / "missing"));
  fs::remove_all(dir);
}

TEST_CASE("metrics on an empty prediction and a perfect one") {
  BinaryMask gt = BinaryMask::Zero(16, 16);
  gt.block(4, 4, 3, 3).setOnes();
  const BinaryMask none = BinaryMask::Zero(16, 16);
  CHECK(miou({gt}, {gt}) == 1.0);
  CHECK(niou({gt}, {gt}) == 1.0);
  CHECK(pd({gt}, {gt}, 3.0) == 1.0);
  CHECK(fa({gt}, {gt}, 3.0) == 0.0);
  CHECK(*area_ratio({gt}, {gt}, 3.0) == 1.0);
  CHECK(miou({none}, {gt}) == 0.0);
  CHECK(pd({none}, {gt}, 3.0) == 0.0);
  CHECK_FALSE(area_ratio({none}, {gt}, 3.0).has_value());
  CHECK(niou({none}, {none}) == 1.0);
}

TEST_CASE("fa modes and matching distance") {
  BinaryMask gt = BinaryMask::Zero(16, 16), pred = BinaryMask::Zero(16, 16);
  gt(5, 5) = 1;
  pred(5, 5) = pred(5, 6) = 1;  // matched component with one extra pixel
  pred(12, 12) = 1;             // clutter
  CHECK(fa({pred}, {gt}, 3.0) == doctest::Approx(1e6 / 256));
  CHECK(fa({pred}, {gt}, 3.0, 8, FaMode::kAllFalsePixels) == doctest::Approx(2e6 / 256));
  CHECK(pd({pred}, {gt}, 0.4) == 0.0);
  CHECK(pd({pred}, {gt}, 0.5) == 1.0);
}

TEST_CASE("metrics agree with the reference on random masks") {
  for (int trial = 0; trial < 30; ++trial) {
    BinaryMask gt(16, 16), pred(16, 16);
    for (Eigen::Index i = 0; i < gt.size(); ++i) {
      gt.data()[i] = oracle::uniform(0, 1) < 0.08;
      pred.data()[i] = oracle::uniform(0, 1) < 0.08;
    }
    const auto g = oracle::blobs(gt), p = oracle::blobs(pred);
    const auto m = oracle::match(g, p, 3.0);
    if (!g.empty()) CHECK(pd({pred}, {gt}, 3.0) == static_cast<double>(m.size()) / static_cast<double>(g.size()));
    std::vector<bool> used(p.size());
    for (const auto& [gi, pi] : m) used[pi] = true;
    long false_px = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!used[j]) false_px += static_cast<long>(p[j].pixels.size());
    }
    CHECK(fa({pred}, {gt}, 3.0) == 1e6 * static_cast<double>(false_px) / 256.0);
  }
}

TEST_CASE("threshold sweep and evaluation report") {
  const Scene s = generate_scene(SceneSpec{}, 1);
  ScalarField prob = s.gt.cast<double>() * 0.9 + 0.05;
  const auto rep = evaluate({prob}, {s.gt}, EvalConfig{});
  CHECK(rep.miou == 1.0);
  CHECK(rep.best_miou == 1.0);
  CHECK(rep.bins[0].count + rep.bins[1].count + rep.bins[2].count + rep.bins[3].count == static_cast<int>(s.targets.size()));
  CHECK_FALSE(report_csv(rep).empty());
  CHECK_FALSE(report_table(rep).empty());
  EvalConfig bad;
  bad.threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
}

TEST_CASE("margin and support diagnostics") {
  const int H = 20, W = 20;
  BinaryMask gt = BinaryMask::Zero(H, W);
  gt.block(8, 8, 3, 3).setOnes();
  FeatureMap f(2, H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) f.pixel({r, c}) = gt(r, c) ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
  }
  std::mt19937_64 rng(1);
  CHECK(margin_diagnostic(f, {{9, 9}}, gt, 16, rng) == doctest::Approx(1.0));
  ScalarField A = ScalarField::Zero(H, W);
  A.block(8, 8, 3, 3).setOnes();
  const auto radii = support_radii(A, {{9, 9}});
  CHECK(radii[0] == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("a short training run is reproducible and finite") {
  const fs::path dir = scratch("train");
  SceneSpec spec;
  spec.height = spec.width = 32;
  spec.targets_min = spec.targets_max = 2;
  const Dataset d = generate_dataset(spec, 8, 4, dir);
  Config cfg;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 3;
  cfg.axes.ltd = true;
  cfg.axes.hbc = true;
  cfg.axes.asg = true;
  const TrainStats a = run_experiment(cfg, d), b = run_experiment(cfg, d);
  CHECK(epochs_csv(a) == epochs_csv(b));
  CHECK(steps_csv(a) == steps_csv(b));
  CHECK(gate_csv(a) == gate_csv(b));
  CHECK(a.final_parameters == b.final_parameters);
  CHECK(a.epochs.size() == 3);
  CHECK(a.steps.size() == 4);
  CHECK(all_finite(a.final_parameters));
  CHECK_FALSE(a.gate_log.empty());
  CHECK(plateau_epochs(cfg) == std::vector<int>{2});
  fs::remove_all(dir);
}
