#pragma once

#include <utility>

#include "reads/errors.hpp"

namespace reads {

enum class Padding { kSame, kValid };

namespace kern {

// Geometry of one conv2d call. Input is H×W×Cin row-major, kernel is
// kh×kw×Cin×Cout, output H'×W'×Cout with
// out = floor((in + pad - k) / stride) + 1 per axis.
struct Conv2dGeom {
  int in_h, in_w, cin;
  int kh, kw, cout;
  int sy, sx;
  int pad_top, pad_left;
  int out_h, out_w;
};

// Validates extents and computes output shape / padding. Throws ShapeError
// for impossible kernels and ConfigError for zero-extent outputs.
Conv2dGeom make_conv2d_geom(int in_h, int in_w, int cin, int kh, int kw, int cout, int sy, int sx,
                            Padding pad);

struct Pool2dGeom {
  int in_h, in_w, c;
  int kh, kw;
  int sy, sx;
  int out_h, out_w;
};

Pool2dGeom make_pool2d_geom(int in_h, int in_w, int c, int kh, int kw, int sy, int sx);

// OpenMP-parallel kernels. Parallelism is always over independent output
// (or gradient-destination) elements with a fixed inner summation order, so
// results are bit-identical for any thread count.

// out[m×n] = a[m×k] · b[k×n]
void matmul(const double* a, const double* b, double* out, int m, int k, int n);
// da[m×k] += g[m×n] · bᵀ
void matmul_grad_a(const double* g, const double* b, double* da, int m, int k, int n);
// db[k×n] += aᵀ · g[m×n]
void matmul_grad_b(const double* g, const double* a, double* db, int m, int k, int n);

// Cross-correlation, HWC layout.
void conv2d(const double* in, const double* kernel, double* out, const Conv2dGeom& g);
void conv2d_grad_input(const double* gout, const double* kernel, double* din,
                       const Conv2dGeom& g);  // accumulates
void conv2d_grad_kernel(const double* gout, const double* in, double* dkernel,
                        const Conv2dGeom& g);  // accumulates

// Max pooling; argmax holds the flat input index of each window maximum
// (first maximal element in row-major window scan order).
void maxpool(const double* in, double* out, int* argmax, const Pool2dGeom& g);
void avgpool(const double* in, double* out, const Pool2dGeom& g);

// Bilinear sampling of an H×W×C image at grid (oh×ow×2, channel 0 = x,
// channel 1 = y, both normalized to [0,1] with pixel centers at (i+0.5)/n).
// Coordinates outside the image clamp to the border.
void bilinear_sample(const double* img, const double* grid, double* out, int h, int w, int c,
                     int oh, int ow);
// Accumulating backward for both the image and the grid. Serial: the image
// scatter has data-dependent destinations.
void bilinear_sample_grad(const double* img, const double* grid, const double* gout, double* dimg,
                          double* dgrid, int h, int w, int c, int oh, int ow);

}  // namespace kern

// Plain serial reference implementations of the hot kernels. These are the
// comparison baseline for the kernel tests and the benchmark tool; they are
// written independently of the parallel versions.
namespace ref {

void matmul(const double* a, const double* b, double* out, int m, int k, int n);
void conv2d(const double* in, const double* kernel, double* out, const kern::Conv2dGeom& g);
void conv2d_grad_input(const double* gout, const double* kernel, double* din,
                       const kern::Conv2dGeom& g);
void conv2d_grad_kernel(const double* gout, const double* in, double* dkernel,
                        const kern::Conv2dGeom& g);
void bilinear_sample(const double* img, const double* grid, double* out, int h, int w, int c,
                     int oh, int ow);
void maxpool(const double* in, double* out, int* argmax, const kern::Pool2dGeom& g);
void avgpool(const double* in, double* out, const kern::Pool2dGeom& g);

}  // namespace ref
}  // namespace reads
