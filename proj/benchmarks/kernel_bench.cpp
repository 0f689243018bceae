// Compares the default layer kernels (im2col + tiled GEMM, OpenMP across
// frames) against the naive serial reference implementations on model-shaped
// workloads, verifying bit-identical outputs along the way.
//
//   kernel_bench [--reps N] [--smoke]
//
// --smoke shrinks the shapes and repetition count so the run doubles as a
// fast regression check (it is registered as a test).

#include "spadvae/kernels.hpp"
#include "spadvae/rng.hpp"
#include "spadvae/tensor.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

using namespace spadvae;
using Clock = std::chrono::steady_clock;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape,
                     std::uint64_t seed) {
  Tensor t(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = rng.next_uniform(-1.0, 1.0);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Case {
  std::string name;
  std::function<Tensor()> fast;
  std::function<Tensor()> serial;
};

double time_ms(const std::function<Tensor()>& fn, std::size_t reps,
               double* checksum) {
  fn(); // warm caches before timing
  const Clock::time_point t0 = Clock::now();
  for (std::size_t i = 0; i < reps; ++i) {
    const Tensor y = fn();
    *checksum += y.data()[0];
  }
  const Clock::time_point t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() /
         static_cast<double>(reps);
}

} // namespace

int main(int argc, char** argv) {
  std::size_t reps = 20;
  bool smoke = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--smoke") == 0) {
      smoke = true;
    } else if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) {
      reps = static_cast<std::size_t>(std::stoull(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: kernel_bench [--reps N] [--smoke]\n");
      return 2;
    }
  }
  if (smoke) reps = 2;

  // Model-shaped workloads: the first (widest) conv stage, a middle stage,
  // the matching decoder stages, and the fc bottleneck. Smoke mode shrinks
  // the batch and spatial extent but keeps every code path.
  const std::size_t n = smoke ? 4 : 64;
  const std::size_t hw = smoke ? 16 : 64;
  const nn::ConvSpec spec; // 4x4, stride 2, pad 1

  const Tensor x0 = random_tensor({n, 1, hw, hw}, 11);
  const Tensor w0 = random_tensor({8, 1, 4, 4}, 12);
  const Tensor b0 = random_tensor({8}, 13);
  const Tensor g0 = random_tensor(
      {n, 8, nn::conv_out_extent(hw, spec), nn::conv_out_extent(hw, spec)},
      14);

  const std::size_t mh = hw / 4;
  const Tensor x1 = random_tensor({n, 16, mh, mh}, 21);
  const Tensor w1 = random_tensor({24, 16, 4, 4}, 22);
  const Tensor b1 = random_tensor({24}, 23);
  const Tensor g1 = random_tensor(
      {n, 24, nn::conv_out_extent(mh, spec), nn::conv_out_extent(mh, spec)},
      24);

  const Tensor tx = random_tensor({n, 24, mh / 2, mh / 2}, 31);
  const Tensor tw = random_tensor({24, 16, 4, 4}, 32);
  const Tensor tb = random_tensor({16}, 33);
  const Tensor tg = random_tensor(
      {n, 16, nn::tconv_out_extent(mh / 2, spec),
       nn::tconv_out_extent(mh / 2, spec)},
      34);

  const std::size_t ff = smoke ? 32 : 256;
  const Tensor fx = random_tensor({n, ff}, 41);
  const Tensor fw = random_tensor({32, ff}, 42);
  const Tensor fb = random_tensor({32}, 43);
  const Tensor fg = random_tensor({n, 32}, 44);

  std::vector<Case> cases;
  cases.push_back({"conv_fwd 1ch",
                   [&] { return nn::conv2d_forward(x0, w0, b0, spec); },
                   [&] { return nn::ref::conv2d_forward(x0, w0, b0, spec); }});
  cases.push_back({"conv_fwd 16ch",
                   [&] { return nn::conv2d_forward(x1, w1, b1, spec); },
                   [&] { return nn::ref::conv2d_forward(x1, w1, b1, spec); }});
  cases.push_back(
      {"conv_bwd 16ch",
       [&] { return nn::conv2d_backward(x1, w1, g1, spec).weight; },
       [&] { return nn::ref::conv2d_backward(x1, w1, g1, spec).weight; }});
  cases.push_back(
      {"tconv_fwd", [&] { return nn::tconv2d_forward(tx, tw, tb, spec); },
       [&] { return nn::ref::tconv2d_forward(tx, tw, tb, spec); }});
  cases.push_back(
      {"tconv_bwd",
       [&] { return nn::tconv2d_backward(tx, tw, tg, spec).input; },
       [&] { return nn::ref::tconv2d_backward(tx, tw, tg, spec).input; }});
  cases.push_back({"fc_fwd", [&] { return nn::fc_forward(fx, fw, fb); },
                   [&] { return nn::ref::fc_forward(fx, fw, fb); }});
  cases.push_back({"fc_bwd",
                   [&] { return nn::fc_backward(fx, fw, fg).weight; },
                   [&] { return nn::ref::fc_backward(fx, fw, fg).weight; }});

  std::printf("kernel          serial_ms    fast_ms    speedup  match\n");
  std::printf("------------- ----------- ---------- ---------- ------\n");
  double checksum = 0.0;
  int mismatches = 0;
  for (const Case& c : cases) {
    const Tensor fast_out = c.fast();
    const Tensor serial_out = c.serial();
    const bool match = bitwise_equal(fast_out, serial_out);
    if (!match) ++mismatches;

    const double fast_ms = time_ms(c.fast, reps, &checksum);
    const double serial_ms = time_ms(c.serial, reps, &checksum);
    std::printf("%-13s %11.3f %10.3f %9.2fx %6s\n", c.name.c_str(), serial_ms,
                fast_ms, serial_ms / fast_ms, match ? "bit" : "DIFF");
  }
  std::printf("\n(batch %zu, %zux%zu input, %zu reps; 'bit' = outputs "
              "bitwise identical)\n",
              n, hw, hw, reps);
  if (checksum == 12345.0) std::printf(" \n"); // keep results observable

  if (mismatches > 0) {
    std::fprintf(stderr, "error: %d kernel(s) diverged from the serial "
                         "reference\n",
                 mismatches);
    return 1;
  }
  return 0;
}
