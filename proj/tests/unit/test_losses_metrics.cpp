#include <cmath>
#include <random>

#include "doctest.h"
#include "gs4d/losses_metrics.hpp"
#include "scenes.hpp"

using namespace gs4d;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h, c);
  for (double& v : img.values()) v = u(rng);
  return img;
}

// Direct per-window SSIM with an explicit 2D Gaussian window.
double ssim_oracle(const Image& a, const Image& b) {
  const int n = 11;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double wsum = 0.0;
  double win[11][11];
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      win[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * sigma * sigma));
      wsum += win[i][j];
    }
  }
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y0 = 0; y0 + n <= a.height(); ++y0) {
      for (int x0 = 0; x0 + n <= a.width(); ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            const double w = win[i][j] / wsum;
            const double va = a.at(x0 + j, y0 + i, c), vb = b.at(x0 + j, y0 + i, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += (2 * ma * mb + c1) * (2 * cov + c2) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace

TEST_CASE("mse_loss") {
  const Image zeros(8, 8, 3, 0.0), ones(8, 8, 3, 1.0);
  const std::vector<Image> a = {zeros}, b = {zeros}, c = {ones};
  CHECK(mse_loss(a, b) == 0.0);
  CHECK(mse_loss(a, c) == 1.0);
  CHECK_THROWS_AS(image_mse(zeros, Image(4, 8, 3)), DomainError);
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 24, 20, 3);
  const Image b = random_image(rng, 24, 20, 3);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-12);
  CHECK(std::abs(ssim(a, b)) <= 1.0);

  const Image black(16, 16, 1, 0.0), white(16, 16, 1, 1.0);
  const double c1 = 1e-4, c2 = 9e-4;
  const double closed = (0.0 + c1) * (0.0 + c2) / ((0.0 + 1.0 + c1) * (0.0 + 0.0 + c2));
  CHECK(ssim(black, white) == doctest::Approx(closed).epsilon(1e-12));
  CHECK(std::abs(ssim(black, white) - ssim_oracle(black, white)) < 1e-12);

  CHECK_THROWS_AS(ssim(Image(10, 30, 1), Image(10, 30, 1)), DomainError);
}

TEST_CASE("ssim_gradient matches finite differences") {
  std::mt19937_64 rng(2);
  const Image a = random_image(rng, 14, 13, 2);
  const Image b = random_image(rng, 14, 13, 2);
  const Image g = ssim_gradient(a, b);
  for (std::size_t i = 0; i < a.size(); i += 7) {
    Image plus = a, minus = a;
    plus.values()[i] += 1e-6;
    minus.values()[i] -= 1e-6;
    const double fd = (ssim(plus, b) - ssim(minus, b)) / 2e-6;
    CHECK(g.values()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("psnr") {
  const Image a(4, 4, 1, 0.0), b(4, 4, 1, 1.0), c(4, 4, 1, 0.1);
  CHECK(psnr(a, b) == 0.0);
  CHECK(psnr(a, a) == 99.0);
  CHECK(psnr(a, c) == doctest::Approx(20.0).epsilon(1e-12));
  double previous = 1e9;
  for (double d : {0.01, 0.05, 0.2, 0.5}) {
    const double p = psnr(a, Image(4, 4, 1, d));
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("depth_rmse") {
  std::mt19937_64 rng(4);
  Image t = random_image(rng, 6, 5, 1);
  for (double& v : t.values()) v += 1.0;
  CHECK(depth_rmse(t, t) == 0.0);
  Image shifted = t;
  for (double& v : shifted.values()) v += 0.75;
  CHECK(depth_rmse(shifted, t) == doctest::Approx(0.75).epsilon(1e-12));

  Image mask(6, 5, 1, 0.0);
  mask.at(2, 3) = 1.0;
  shifted.at(2, 3) = t.at(2, 3) + 2.0;
  CHECK(depth_rmse(shifted, t, mask) == doctest::Approx(2.0));
  CHECK_THROWS_AS(depth_rmse(shifted, t, Image(6, 5, 1, 0.0)), DomainError);
}

TEST_CASE("normal_angle_deg") {
  const Image z(3, 3, 3, 0.0);
  Image up = z, side = z, down = z;
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      up.at(x, y, 2) = 1.0;
      down.at(x, y, 2) = -1.0;
      side.at(x, y, 0) = 1.0;
    }
  }
  CHECK(normal_angle_deg(up, up) == 0.0);
  CHECK(normal_angle_deg(up, side) == doctest::Approx(90.0));
  CHECK(normal_angle_deg(up, down) == doctest::Approx(180.0));
  CHECK_THROWS_AS(normal_angle_deg(z, up), DomainError);
}

TEST_CASE("reg_losses") {
  GaussianScene still;
  Gaussian4D g;
  g.lifespan = 1e6;
  still.push_back(g);
  const RegularizerLosses r = reg_losses(still);
  CHECK(r.velocity == 0.0);
  CHECK(r.angular == 0.0);
  CHECK(r.lifespan == doctest::Approx(1e-6));

  GaussianScene moving;
  g.velocity = Vec3(1, -2, 3);
  moving.push_back(g);
  CHECK(reg_losses(moving).velocity == 6.0);

  GaussianScene two;
  g.lifespan = 1.0;
  two.push_back(g);
  g.lifespan = 2.0;
  two.push_back(g);
  CHECK(reg_losses(two).lifespan == 0.75);
  two.lifespan[1] = 2.5;
  CHECK(reg_losses(two).lifespan < 0.75);
}

TEST_CASE("expert_losses") {
  const Image d(4, 4, 1, 2.0), n(4, 4, 3, 0.5);
  const std::vector<Image> ds = {d}, ns = {n};
  const ExpertLosses same = expert_losses(ds, ds, ns, ns);
  CHECK(same.depth == 0.0);
  CHECK(same.normal == 0.0);
  const std::vector<Image> off = {Image(4, 4, 1, 3.0)};
  CHECK(expert_losses(off, ds, ns, ns).depth == 1.0);
}

TEST_CASE("warmup") {
  const LossWeights w;
  const LossWeights zero = warmup(0, w);
  CHECK(zero.lpips == 0.0);
  CHECK(zero.ssim == 0.0);
  CHECK(zero.velocity == 0.0);
  CHECK(zero.depth == 0.0);
  const LossWeights half = warmup(1250, w);
  CHECK(half.lpips == 1.0);
  CHECK(half.ssim == 0.1);
  CHECK(half.normal == 0.005);
  const LossWeights full = warmup(2500, w);
  CHECK(full.velocity == 1.0);
  CHECK(full.depth == 0.1);
  CHECK(warmup(10000, w).lifespan == 1.0);
  double previous = -1.0;
  for (int step = 0; step <= 3000; step += 100) {
    const double v = warmup(step, w).angular;
    CHECK(v >= previous);
    CHECK(v <= 1.0);
    previous = v;
  }
}

TEST_CASE("total_loss") {
  std::mt19937_64 rng(6);
  gs4d::testing::LayeredSceneOptions opt;
  opt.count = 12;
  opt.max_speed = 0.4;
  opt.max_spin = 0.5;
  opt.lifespan = 3.0;
  const GaussianScene scene = gs4d::testing::layered_scene(rng, opt);
  const CameraIntrinsics intr = gs4d::testing::square_camera(24, 24);

  SUBCASE("perfect render at step 0") {
    const Frame f = gs4d::testing::rendered_frame(scene, intr, CameraPose{}, 0.1, {}, true);
    const std::vector<RenderOutput> r = {render(scene, intr, CameraPose{}, 0.1)};
    const std::vector<Frame> t = {f};
    CHECK(total_loss(r, t, scene, 0, LossWeights{}).total == doctest::Approx(0.0));
  }

  SUBCASE("matches an independent weighted sum") {
    std::vector<RenderOutput> rendered;
    std::vector<Frame> targets;
    for (int i = 0; i < 3; ++i) {
      rendered.push_back(render(scene, intr, CameraPose{}, 0.2 * i));
      Frame f;
      f.image = random_image(rng, 24, 24, 3);
      f.intrinsics = intr;
      f.timestamp = 0.2 * i;
      if (i != 1) {
        f.depth_target = random_image(rng, 24, 24, 1);
        f.normal_target = random_image(rng, 24, 24, 3);
      }
      targets.push_back(f);
    }
    const PerceptualLoss fake = [](const Image& a, const Image& b) {
      return 0.5 * image_mse(a, b);
    };
    const LossWeights w;
    const LossBreakdown b = total_loss(rendered, targets, scene, 2500, w, fake);
    CHECK(b.lpips_enabled);

    double mse = 0, structural = 0, lp = 0, depth = 0, normal = 0;
    for (int i = 0; i < 3; ++i) {
      mse += image_mse(rendered[i].color, targets[i].image) / 3;
      structural += (1 - ssim_oracle(rendered[i].color, targets[i].image)) / 3;
      lp += 0.5 * image_mse(rendered[i].color, targets[i].image) / 3;
      if (i != 1) {
        depth += image_mse(rendered[i].depth, *targets[i].depth_target) / 2;
        normal += image_mse(rendered[i].normal, *targets[i].normal_target) / 2;
      }
    }
    double vel = 0, ang = 0, life = 0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
      vel += std::abs(scene.velocity[i].x()) + std::abs(scene.velocity[i].y()) +
             std::abs(scene.velocity[i].z());
      ang += std::abs(scene.ang_velocity[i].x()) + std::abs(scene.ang_velocity[i].y()) +
             std::abs(scene.ang_velocity[i].z());
      life += 1.0 / scene.lifespan[i];
    }
    const double n = static_cast<double>(scene.size());
    const double expected = mse + 2.0 * lp + 0.2 * structural + vel / n + ang / n + life / n +
                            0.1 * depth + 0.01 * normal;
    CHECK(std::abs(b.total - expected) < 1e-9);

    const LossWeights& ww = b.warmed;
    const double resummed = b.mse + ww.lpips * b.lpips + ww.ssim * b.ssim_term +
                            ww.velocity * b.velocity + ww.angular * b.angular +
                            ww.lifespan * b.lifespan + ww.depth * b.depth + ww.normal * b.normal;
    CHECK(std::abs(b.total - resummed) < 1e-9);

    // Mean semantics: a doubled batch of the same frames gives the same total.
    std::vector<RenderOutput> r2 = rendered;
    r2.insert(r2.end(), rendered.begin(), rendered.end());
    std::vector<Frame> t2 = targets;
    t2.insert(t2.end(), targets.begin(), targets.end());
    CHECK(total_loss(r2, t2, scene, 2500, w, fake).total == doctest::Approx(b.total).epsilon(1e-12));
  }
}
