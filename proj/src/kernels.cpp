#include "reads/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "reads/errors.hpp"

namespace reads {
namespace kern {

Conv2dGeom make_conv2d_geom(int in_h, int in_w, int cin, int kh, int kw, int cout, int sy, int sx,
                            Padding pad) {
  if (in_h < 1 || in_w < 1 || cin < 1 || kh < 1 || kw < 1 || cout < 1 || sy < 1 || sx < 1) {
    throw ShapeError("conv2d: extents and strides must be positive");
  }
  Conv2dGeom g{in_h, in_w, cin, kh, kw, cout, sy, sx, 0, 0, 0, 0};
  if (pad == Padding::kSame) {
    // TF-style SAME: output = ceil(in / stride), padding split low/high.
    g.out_h = (in_h + sy - 1) / sy;
    g.out_w = (in_w + sx - 1) / sx;
    int pad_h = std::max(0, (g.out_h - 1) * sy + kh - in_h);
    int pad_w = std::max(0, (g.out_w - 1) * sx + kw - in_w);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (kh > in_h || kw > in_w) {
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " exceeds input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                       " with valid padding");
    }
    g.out_h = (in_h - kh) / sy + 1;
    g.out_w = (in_w - kw) / sx + 1;
  }
  if (g.out_h < 1 || g.out_w < 1) {
    throw ConfigError("conv2d: configuration yields zero-extent output");
  }
  return g;
}

Pool2dGeom make_pool2d_geom(int in_h, int in_w, int c, int kh, int kw, int sy, int sx) {
  if (kh > in_h || kw > in_w) {
    throw ShapeError("pool: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  if (kh < 1 || kw < 1 || sy < 1 || sx < 1) {
    throw ShapeError("pool: kernel and stride must be positive");
  }
  Pool2dGeom g{in_h, in_w, c, kh, kw, sy, sx, 0, 0};
  g.out_h = (in_h - kh) / sy + 1;
  g.out_w = (in_w - kw) / sx + 1;
  return g;
}

void matmul(const double* a, const double* b, double* out, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<std::ptrdiff_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = 0.0;
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::ptrdiff_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_grad_a(const double* g, const double* b, double* da, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* grow = g + static_cast<std::ptrdiff_t>(i) * n;
    double* darow = da + static_cast<std::ptrdiff_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::ptrdiff_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

void matmul_grad_b(const double* g, const double* a, double* db, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < k; ++p) {
    double* dbrow = db + static_cast<std::ptrdiff_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = a[static_cast<std::ptrdiff_t>(i) * k + p];
      const double* grow = g + static_cast<std::ptrdiff_t>(i) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

void conv2d(const double* in, const double* kernel, double* out, const Conv2dGeom& g) {
  const std::ptrdiff_t in_row = static_cast<std::ptrdiff_t>(g.in_w) * g.cin;
  const std::ptrdiff_t out_row = static_cast<std::ptrdiff_t>(g.out_w) * g.cout;
  const std::ptrdiff_t k_ci = g.cout;
  const std::ptrdiff_t k_kx = static_cast<std::ptrdiff_t>(g.cin) * g.cout;
  const std::ptrdiff_t k_ky = static_cast<std::ptrdiff_t>(g.kw) * k_kx;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < g.out_h; ++oy) {
    double* orow = out + oy * out_row;
    for (int ox = 0; ox < g.out_w; ++ox) {
      double* opix = orow + static_cast<std::ptrdiff_t>(ox) * g.cout;
      for (int co = 0; co < g.cout; ++co) opix[co] = 0.0;
      const int iy0 = oy * g.sy - g.pad_top;
      const int ix0 = ox * g.sx - g.pad_left;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ix0 + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          const double* ipix = in + iy * in_row + static_cast<std::ptrdiff_t>(ix) * g.cin;
          const double* kpos = kernel + ky * k_ky + kx * k_kx;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double iv = ipix[ci];
            const double* krow = kpos + ci * k_ci;
            for (int co = 0; co < g.cout; ++co) opix[co] += iv * krow[co];
          }
        }
      }
    }
  }
}

void conv2d_grad_input(const double* gout, const double* kernel, double* din,
                       const Conv2dGeom& g) {
  const std::ptrdiff_t in_row = static_cast<std::ptrdiff_t>(g.in_w) * g.cin;
  const std::ptrdiff_t out_row = static_cast<std::ptrdiff_t>(g.out_w) * g.cout;
  const std::ptrdiff_t k_ci = g.cout;
  const std::ptrdiff_t k_kx = static_cast<std::ptrdiff_t>(g.cin) * g.cout;
  const std::ptrdiff_t k_ky = static_cast<std::ptrdiff_t>(g.kw) * k_kx;
  // Gather form: each input pixel sums over the output positions that read it.
#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < g.in_h; ++iy) {
    for (int ix = 0; ix < g.in_w; ++ix) {
      double* dpix = din + iy * in_row + static_cast<std::ptrdiff_t>(ix) * g.cin;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int oy_num = iy + g.pad_top - ky;
        if (oy_num < 0 || oy_num % g.sy != 0) continue;
        const int oy = oy_num / g.sy;
        if (oy >= g.out_h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ox_num = ix + g.pad_left - kx;
          if (ox_num < 0 || ox_num % g.sx != 0) continue;
          const int ox = ox_num / g.sx;
          if (ox >= g.out_w) continue;
          const double* gpix = gout + oy * out_row + static_cast<std::ptrdiff_t>(ox) * g.cout;
          const double* kpos = kernel + ky * k_ky + kx * k_kx;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double* krow = kpos + ci * k_ci;
            double acc = 0.0;
            for (int co = 0; co < g.cout; ++co) acc += gpix[co] * krow[co];
            dpix[ci] += acc;
          }
        }
      }
    }
  }
}

void conv2d_grad_kernel(const double* gout, const double* in, double* dkernel,
                        const Conv2dGeom& g) {
  const std::ptrdiff_t in_row = static_cast<std::ptrdiff_t>(g.in_w) * g.cin;
  const std::ptrdiff_t out_row = static_cast<std::ptrdiff_t>(g.out_w) * g.cout;
  const std::ptrdiff_t k_kx = static_cast<std::ptrdiff_t>(g.cin) * g.cout;
  const std::ptrdiff_t k_ky = static_cast<std::ptrdiff_t>(g.kw) * k_kx;
  const int taps = g.kh * g.kw;
  // Each (ky,kx) tap owns a distinct slab of dkernel.
#pragma omp parallel for schedule(static)
  for (int tap = 0; tap < taps; ++tap) {
    const int ky = tap / g.kw;
    const int kx = tap % g.kw;
    double* dk = dkernel + ky * k_ky + kx * k_kx;
    for (int oy = 0; oy < g.out_h; ++oy) {
      const int iy = oy * g.sy - g.pad_top + ky;
      if (iy < 0 || iy >= g.in_h) continue;
      for (int ox = 0; ox < g.out_w; ++ox) {
        const int ix = ox * g.sx - g.pad_left + kx;
        if (ix < 0 || ix >= g.in_w) continue;
        const double* ipix = in + iy * in_row + static_cast<std::ptrdiff_t>(ix) * g.cin;
        const double* gpix = gout + oy * out_row + static_cast<std::ptrdiff_t>(ox) * g.cout;
        for (int ci = 0; ci < g.cin; ++ci) {
          const double iv = ipix[ci];
          double* dkrow = dk + static_cast<std::ptrdiff_t>(ci) * g.cout;
          for (int co = 0; co < g.cout; ++co) dkrow[co] += iv * gpix[co];
        }
      }
    }
  }
}

void maxpool(const double* in, double* out, int* argmax, const Pool2dGeom& g) {
  const std::ptrdiff_t in_row = static_cast<std::ptrdiff_t>(g.in_w) * g.c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const std::ptrdiff_t obase =
          (static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.c;
      for (int c = 0; c < g.c; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.sy + ky;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.sx + kx;
            const std::ptrdiff_t idx = iy * in_row + static_cast<std::ptrdiff_t>(ix) * g.c + c;
            if (in[idx] > best) {  // strict: first maximal index wins
              best = in[idx];
              best_idx = static_cast<int>(idx);
            }
          }
        }
        out[obase + c] = best;
        if (argmax) argmax[obase + c] = best_idx;
      }
    }
  }
}

void avgpool(const double* in, double* out, const Pool2dGeom& g) {
  const std::ptrdiff_t in_row = static_cast<std::ptrdiff_t>(g.in_w) * g.c;
  const double inv = 1.0 / (static_cast<double>(g.kh) * g.kw);
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const std::ptrdiff_t obase =
          (static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.c;
      for (int c = 0; c < g.c; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.sy + ky;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.sx + kx;
            acc += in[iy * in_row + static_cast<std::ptrdiff_t>(ix) * g.c + c];
          }
        }
        out[obase + c] = acc * inv;
      }
    }
  }
}

namespace {

struct Taps {
  int x0, x1, y0, y1;
  double fx, fy;
};

// Normalized coordinate -> clamped pixel-space taps. Pixel centers sit at
// (i + 0.5) / n, so u*n - 0.5 lands exactly on integers at centers.
inline Taps sample_taps(double u, double v, int w, int h) {
  double x = u * w - 0.5;
  double y = v * h - 0.5;
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  Taps t;
  t.x0 = static_cast<int>(std::floor(x));
  t.y0 = static_cast<int>(std::floor(y));
  if (t.x0 > w - 2) t.x0 = std::max(0, w - 2);
  if (t.y0 > h - 2) t.y0 = std::max(0, h - 2);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = x - t.x0;
  t.fy = y - t.y0;
  return t;
}

inline bool grid_clamped_x(double u, int w) {
  const double x = u * w - 0.5;
  return x <= 0.0 || x >= static_cast<double>(w - 1);
}

inline bool grid_clamped_y(double v, int h) {
  const double y = v * h - 0.5;
  return y <= 0.0 || y >= static_cast<double>(h - 1);
}

}  // namespace

void bilinear_sample(const double* img, const double* grid, double* out, int h, int w, int c,
                     int oh, int ow) {
  const std::ptrdiff_t img_row = static_cast<std::ptrdiff_t>(w) * c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const std::ptrdiff_t gidx = (static_cast<std::ptrdiff_t>(oy) * ow + ox) * 2;
      const Taps t = sample_taps(grid[gidx], grid[gidx + 1], w, h);
      const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
      const double w10 = t.fx * (1.0 - t.fy);
      const double w01 = (1.0 - t.fx) * t.fy;
      const double w11 = t.fx * t.fy;
      const double* p00 = img + t.y0 * img_row + static_cast<std::ptrdiff_t>(t.x0) * c;
      const double* p10 = img + t.y0 * img_row + static_cast<std::ptrdiff_t>(t.x1) * c;
      const double* p01 = img + t.y1 * img_row + static_cast<std::ptrdiff_t>(t.x0) * c;
      const double* p11 = img + t.y1 * img_row + static_cast<std::ptrdiff_t>(t.x1) * c;
      double* opix = out + (static_cast<std::ptrdiff_t>(oy) * ow + ox) * c;
      for (int ch = 0; ch < c; ++ch) {
        opix[ch] = w00 * p00[ch] + w10 * p10[ch] + w01 * p01[ch] + w11 * p11[ch];
      }
    }
  }
}

void bilinear_sample_grad(const double* img, const double* grid, const double* gout, double* dimg,
                          double* dgrid, int h, int w, int c, int oh, int ow) {
  const std::ptrdiff_t img_row = static_cast<std::ptrdiff_t>(w) * c;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const std::ptrdiff_t gidx = (static_cast<std::ptrdiff_t>(oy) * ow + ox) * 2;
      const double u = grid[gidx];
      const double v = grid[gidx + 1];
      const Taps t = sample_taps(u, v, w, h);
      const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
      const double w10 = t.fx * (1.0 - t.fy);
      const double w01 = (1.0 - t.fx) * t.fy;
      const double w11 = t.fx * t.fy;
      const std::ptrdiff_t i00 = t.y0 * img_row + static_cast<std::ptrdiff_t>(t.x0) * c;
      const std::ptrdiff_t i10 = t.y0 * img_row + static_cast<std::ptrdiff_t>(t.x1) * c;
      const std::ptrdiff_t i01 = t.y1 * img_row + static_cast<std::ptrdiff_t>(t.x0) * c;
      const std::ptrdiff_t i11 = t.y1 * img_row + static_cast<std::ptrdiff_t>(t.x1) * c;
      const double* go = gout + (static_cast<std::ptrdiff_t>(oy) * ow + ox) * c;
      double dfx = 0.0, dfy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double g = go[ch];
        if (dimg) {
          dimg[i00 + ch] += w00 * g;
          dimg[i10 + ch] += w10 * g;
          dimg[i01 + ch] += w01 * g;
          dimg[i11 + ch] += w11 * g;
        }
        const double a = img[i00 + ch], b = img[i10 + ch];
        const double cc = img[i01 + ch], d = img[i11 + ch];
        dfx += g * ((1.0 - t.fy) * (b - a) + t.fy * (d - cc));
        dfy += g * ((1.0 - t.fx) * (cc - a) + t.fx * (d - b));
      }
      if (dgrid) {
        // d(pixel x)/d(normalized u) = w; zero where the clamp is active.
        if (!grid_clamped_x(u, w)) dgrid[gidx] += dfx * w;
        if (!grid_clamped_y(v, h)) dgrid[gidx + 1] += dfy * h;
      }
    }
  }
}

}  // namespace kern

namespace ref {

void matmul(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += a[static_cast<std::ptrdiff_t>(i) * k + p] * b[static_cast<std::ptrdiff_t>(p) * n + j];
      }
      out[static_cast<std::ptrdiff_t>(i) * n + j] = acc;
    }
  }
}

void conv2d(const double* in, const double* kernel, double* out, const kern::Conv2dGeom& g) {
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int co = 0; co < g.cout; ++co) {
        double acc = 0.0;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const int iy = oy * g.sy - g.pad_top + ky;
            const int ix = ox * g.sx - g.pad_left + kx;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (int ci = 0; ci < g.cin; ++ci) {
              acc += in[(static_cast<std::ptrdiff_t>(iy) * g.in_w + ix) * g.cin + ci] *
                     kernel[((static_cast<std::ptrdiff_t>(ky) * g.kw + kx) * g.cin + ci) * g.cout +
                            co];
            }
          }
        }
        out[(static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.cout + co] = acc;
      }
    }
  }
}

void conv2d_grad_input(const double* gout, const double* kernel, double* din,
                       const kern::Conv2dGeom& g) {
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int ky = 0; ky < g.kh; ++ky) {
        for (int kx = 0; kx < g.kw; ++kx) {
          const int iy = oy * g.sy - g.pad_top + ky;
          const int ix = ox * g.sx - g.pad_left + kx;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
          for (int ci = 0; ci < g.cin; ++ci) {
            double acc = 0.0;
            for (int co = 0; co < g.cout; ++co) {
              acc += gout[(static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.cout + co] *
                     kernel[((static_cast<std::ptrdiff_t>(ky) * g.kw + kx) * g.cin + ci) * g.cout +
                            co];
            }
            din[(static_cast<std::ptrdiff_t>(iy) * g.in_w + ix) * g.cin + ci] += acc;
          }
        }
      }
    }
  }
}

void conv2d_grad_kernel(const double* gout, const double* in, double* dkernel,
                        const kern::Conv2dGeom& g) {
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int ky = 0; ky < g.kh; ++ky) {
        for (int kx = 0; kx < g.kw; ++kx) {
          const int iy = oy * g.sy - g.pad_top + ky;
          const int ix = ox * g.sx - g.pad_left + kx;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
          for (int ci = 0; ci < g.cin; ++ci) {
            for (int co = 0; co < g.cout; ++co) {
              dkernel[((static_cast<std::ptrdiff_t>(ky) * g.kw + kx) * g.cin + ci) * g.cout + co] +=
                  in[(static_cast<std::ptrdiff_t>(iy) * g.in_w + ix) * g.cin + ci] *
                  gout[(static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.cout + co];
            }
          }
        }
      }
    }
  }
}

void bilinear_sample(const double* img, const double* grid, double* out, int h, int w, int c,
                     int oh, int ow) {
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double u = grid[(static_cast<std::ptrdiff_t>(oy) * ow + ox) * 2];
      const double v = grid[(static_cast<std::ptrdiff_t>(oy) * ow + ox) * 2 + 1];
      double x = std::clamp(u * w - 0.5, 0.0, static_cast<double>(w - 1));
      double y = std::clamp(v * h - 0.5, 0.0, static_cast<double>(h - 1));
      int x0 = std::min(static_cast<int>(std::floor(x)), std::max(0, w - 2));
      int y0 = std::min(static_cast<int>(std::floor(y)), std::max(0, h - 2));
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      double fx = x - x0, fy = y - y0;
      for (int ch = 0; ch < c; ++ch) {
        auto px = [&](int yy, int xx) {
          return img[(static_cast<std::ptrdiff_t>(yy) * w + xx) * c + ch];
        };
        double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x1);
        double bot = (1.0 - fx) * px(y1, x0) + fx * px(y1, x1);
        out[(static_cast<std::ptrdiff_t>(oy) * ow + ox) * c + ch] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
}

void maxpool(const double* in, double* out, int* argmax, const kern::Pool2dGeom& g) {
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int c = 0; c < g.c; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const int iy = oy * g.sy + ky;
            const int ix = ox * g.sx + kx;
            const std::ptrdiff_t idx = (static_cast<std::ptrdiff_t>(iy) * g.in_w + ix) * g.c + c;
            if (in[idx] > best) {
              best = in[idx];
              best_idx = static_cast<int>(idx);
            }
          }
        }
        const std::ptrdiff_t o = (static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.c + c;
        out[o] = best;
        if (argmax) argmax[o] = best_idx;
      }
    }
  }
}

void avgpool(const double* in, double* out, const kern::Pool2dGeom& g) {
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int c = 0; c < g.c; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < g.kh; ++ky) {
          for (int kx = 0; kx < g.kw; ++kx) {
            const int iy = oy * g.sy + ky;
            const int ix = ox * g.sx + kx;
            acc += in[(static_cast<std::ptrdiff_t>(iy) * g.in_w + ix) * g.c + c];
          }
        }
        out[(static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.c + c] =
            acc / (static_cast<double>(g.kh) * g.kw);
      }
    }
  }
}

}  // namespace ref
}  // namespace reads
