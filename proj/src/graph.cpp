#include "usra/graph.hpp"

#include <malloc.h>

#include <memory>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "usra/error.hpp"

namespace usra {

namespace {

// Training rebuilds the tape every step with mostly repeating tensor sizes.
// Mid-size blocks recycle in the arena instead of bouncing through mmap
// (page faults + kernel zeroing per step); the handful of very large
// transients stay mmap-backed so long-lived replay entries cannot fragment
// the heap around them.
const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 8 << 20);
    mallopt(M_TRIM_THRESHOLD, 32 << 20);
    return true;
}();

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapArr = Eigen::Map<Eigen::ArrayXf>;
using CMapArr = Eigen::Map<const Eigen::ArrayXf>;

CMapArr carr(const Tensor& t) { return CMapArr(t.data(), static_cast<Eigen::Index>(t.size())); }
MapArr marr(Tensor& t) { return MapArr(t.data(), static_cast<Eigen::Index>(t.size())); }

// im2col and its transposes need large transient buffers every conv call;
// reusing thread-local storage keeps the allocator out of the hot loop.
// Slot discipline: forward {0: cols, 1: y2, 3: pad}; backward {0: gy2,
// 1: cols, 2: gcols, 3: pad}. Calls never nest within a thread.
float* scratch(int slot, std::size_t n) {
    struct Buf {
        AlignedStorage data;
        std::size_t cap = 0;
    };
    thread_local Buf bufs[6];
    Buf& b = bufs[slot];
    if (b.cap < n) {
        b.data = aligned_alloc_floats(n);
        b.cap = n;
    }
    return b.data.get();
}


// Pad one [C,H,W] image by `pad` on each side, replicating edges or
// zero-filling.
void pad_image(const float* x, float* xp, int c_count, int h, int w, int pad, bool zero_edges) {
    const int wp = w + 2 * pad;
    for (int c = 0; c < c_count; ++c) {
        const float* src = x + static_cast<std::size_t>(c) * h * w;
        float* dst = xp + static_cast<std::size_t>(c) * (h + 2 * pad) * wp;
        for (int y = -pad; y < h + pad; ++y) {
            float* out = dst + (y + pad) * wp;
            if (zero_edges && (y < 0 || y >= h)) {
                std::memset(out, 0, sizeof(float) * static_cast<std::size_t>(wp));
                continue;
            }
            const float* row = src + std::clamp(y, 0, h - 1) * w;
            for (int p = 0; p < pad; ++p) {
                out[p] = zero_edges ? 0.0f : row[0];
                out[w + pad + p] = zero_edges ? 0.0f : row[w - 1];
            }
            std::memcpy(out + pad, row, sizeof(float) * static_cast<std::size_t>(w));
        }
    }
}

struct ConvDims {
    int b, c, h, w, o, ho, wo, stride;
    int pad = 1;
    bool zero_pad = false;
    std::size_t cols_rows() const { return static_cast<std::size_t>(c) * 9; }
    std::size_t cols_n() const { return static_cast<std::size_t>(b) * ho * wo; }
};

// cols[c*9 + dy*3 + dx, b*S + oy*Wo + ox] = xp[b, c, oy*s+dy, ox*s+dx]
// Two passes: stage padded planes (stride 1) or even/odd phase splits
// (stride 2) for the whole batch, then fill cols row-major so writes stream
// sequentially; the scattered accesses all land on the staged planes.
void im2col(const float* x, float* cols, const ConvDims& d) {
    const int wp = d.w + 2 * d.pad;
    const int hp = d.h + 2 * d.pad;
    const int half = wp / 2 + 1;
    const std::size_t plane = d.stride == 1 ? static_cast<std::size_t>(hp) * wp
                                            : static_cast<std::size_t>(hp) * 2 * half;
    float* pad = scratch(3, static_cast<std::size_t>(d.c) * hp * wp);
    float* store = scratch(4, static_cast<std::size_t>(d.b) * d.c * plane);

    for (int b = 0; b < d.b; ++b) {
        float* bstore = store + static_cast<std::size_t>(b) * d.c * plane;
        if (d.stride == 1) {
            pad_image(x + static_cast<std::size_t>(b) * d.c * d.h * d.w, bstore, d.c, d.h, d.w, d.pad,
                      d.zero_pad);
            continue;
        }
        pad_image(x + static_cast<std::size_t>(b) * d.c * d.h * d.w, pad, d.c, d.h, d.w, d.pad, d.zero_pad);
        for (int c = 0; c < d.c; ++c) {
            for (int row = 0; row <= d.h; ++row) {
                const float* src = pad + (static_cast<std::size_t>(c) * hp + row) * wp;
                float* even = bstore + (static_cast<std::size_t>(c) * hp + row) * 2 * half;
                float* odd = even + half;
                for (int j = 0; j < half && 2 * j < wp; ++j) even[j] = src[2 * j];
                for (int j = 0; j < half && 2 * j + 1 < wp; ++j) odd[j] = src[2 * j + 1];
            }
        }
    }

    float* dst = cols;
    for (int c = 0; c < d.c; ++c) {
        for (int dy = 0; dy < 3; ++dy) {
            for (int dx = 0; dx < 3; ++dx) {
                for (int b = 0; b < d.b; ++b) {
                    const float* cplane = store + (static_cast<std::size_t>(b) * d.c + c) * plane;
                    for (int oy = 0; oy < d.ho; ++oy) {
                        const float* src;
                        if (d.stride == 1) {
                            src = cplane + static_cast<std::size_t>(oy + dy) * wp + dx;
                        } else {
                            src = cplane + static_cast<std::size_t>(oy * 2 + dy) * 2 * half +
                                  (dx == 1 ? half : 0) + (dx == 2 ? 1 : 0);
                        }
                        if (d.wo >= 16) {
                            std::memcpy(dst, src, sizeof(float) * static_cast<std::size_t>(d.wo));
                        } else {
                            for (int j = 0; j < d.wo; ++j) dst[j] = src[j];
                        }
                        dst += d.wo;
                    }
                }
            }
        }
    }
}

// Stride-2 col2im for one sample (cols_b laid out [C*9, row_stride] blocks):
// taps accumulate into even/odd column phases of the padded gradient (all
// contiguous adds), which are then interleaved and edge-folded.
void col2im_sample_add(const float* cols_b, std::size_t row_stride, float* gx_b, const ConvDims& d) {
    const int hp = d.h + 2, wp = d.w + 2;
    const int half = wp / 2 + 1;
    std::vector<float> phase(static_cast<std::size_t>(hp) * 2 * half);
    for (int c = 0; c < d.c; ++c) {
        std::fill(phase.begin(), phase.end(), 0.0f);
        for (int dy = 0; dy < 3; ++dy) {
            const float* r0 = cols_b + (static_cast<std::size_t>(c) * 9 + dy * 3) * row_stride;
            const float* r1 = r0 + row_stride;
            const float* r2 = r1 + row_stride;
            for (int oy = 0; oy < d.ho; ++oy) {
                float* even = phase.data() + ((static_cast<std::size_t>(oy * 2 + dy)) * 2) * half;
                float* odd = even + half;
                const std::size_t off = static_cast<std::size_t>(oy) * d.wo;
                for (int j = 0; j < d.wo; ++j) {
                    even[j] += r0[off + j];
                    odd[j] += r1[off + j];
                    even[j + 1] += r2[off + j];
                }
            }
        }
        float* out = gx_b + static_cast<std::size_t>(c) * d.h * d.w;
        for (int py = 0; py < hp; ++py) {
            const int y = std::clamp(py - 1, 0, d.h - 1);
            float* orow = out + static_cast<std::size_t>(y) * d.w;
            const float* even = phase.data() + (static_cast<std::size_t>(py) * 2) * half;
            const float* odd = even + half;
            // interleaved fold: padded col px reads even[px/2] or odd[px/2]
            orow[0] += even[0];
            for (int px = 1; px <= d.w; ++px) {
                const float v = (px & 1) ? odd[px / 2] : even[px / 2];
                orow[px - 1] += v;
            }
            orow[d.w - 1] += ((wp - 1) & 1) ? odd[(wp - 1) / 2] : even[(wp - 1) / 2];
        }
    }
}

// Input gradient of a stride-1 replicate-padded conv: correlate the output
// gradient with the flipped kernel over the full (H+2)x(W+2) padded grid
// (one GEMM), then fold the padding ring back onto the edges with adds.
void conv_input_grad_stride1(const float* gy, const float* k, float* gx, const ConvDims& d) {
    ConvDims d2;
    d2.b = d.b;
    d2.c = d.o;
    d2.h = d.ho;
    d2.w = d.wo;
    d2.o = d.c;
    d2.ho = d.ho + 2;
    d2.wo = d.wo + 2;
    d2.stride = 1;
    d2.pad = 2;
    d2.zero_pad = true;
    const std::size_t rows2 = d2.cols_rows();  // O*9
    const std::size_t n2 = d2.cols_n();        // B*(H+2)*(W+2)
    float* gycols = scratch(1, rows2 * n2);
    im2col(gy, gycols, d2);

    // kflip[c][o*9 + dy*3 + dx] = k[o][c][2-dy][2-dx]
    AlignedStorage kflip_store = aligned_alloc_floats(static_cast<std::size_t>(d.c) * rows2);
    float* kflip = kflip_store.get();
    for (int o = 0; o < d.o; ++o)
        for (int c = 0; c < d.c; ++c)
            for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx)
                    kflip[static_cast<std::size_t>(c) * rows2 + static_cast<std::size_t>(o) * 9 + dy * 3 + dx] =
                        k[(((static_cast<std::size_t>(o)) * d.c + c) * 3 + (2 - dy)) * 3 + (2 - dx)];

    float* dxp = scratch(2, static_cast<std::size_t>(d.c) * n2);
    MapMat(dxp, d.c, static_cast<Eigen::Index>(n2)).noalias() =
        CMapMat(kflip, d.c, static_cast<Eigen::Index>(rows2)) *
        CMapMat(gycols, static_cast<Eigen::Index>(rows2), static_cast<Eigen::Index>(n2));

    const int hp = d.h + 2, wp = d.w + 2;
    const std::size_t s2 = static_cast<std::size_t>(hp) * wp;
    for (int b = 0; b < d.b; ++b) {
        for (int c = 0; c < d.c; ++c) {
            const float* p = dxp + static_cast<std::size_t>(c) * n2 + static_cast<std::size_t>(b) * s2;
            float* out = gx + (static_cast<std::size_t>(b) * d.c + c) * d.h * d.w;
            for (int py = 0; py < hp; ++py) {
                const int y = std::clamp(py - 1, 0, d.h - 1);
                float* orow = out + static_cast<std::size_t>(y) * d.w;
                const float* prow = p + static_cast<std::size_t>(py) * wp;
                orow[0] += prow[0];
                MapArr(orow, d.w) += CMapArr(prow + 1, d.w);
                orow[d.w - 1] += prow[wp - 1];
            }
        }
    }
}

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ks, int stride) {
    if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3)
        raise(ErrorKind::logic, "conv2d kernel must be [O,C,3,3], got " + shape_to_string(ks));
    if (xs.size() != 4) raise(ErrorKind::logic, "conv2d input must be [B,C,H,W], got " + shape_to_string(xs));
    if (xs[1] != ks[1])
        raise(ErrorKind::logic,
              "conv2d channel mismatch: input " + shape_to_string(xs) + " vs kernel " + shape_to_string(ks));
    if (xs[2] < 3 || xs[3] < 3)
        raise(ErrorKind::logic, "conv2d input spatial size must be >= 3, got " + shape_to_string(xs));
    if (stride != 1 && stride != 2) raise(ErrorKind::logic, "conv2d stride must be 1 or 2");
    if (stride == 2 && (xs[2] % 2 || xs[3] % 2))
        raise(ErrorKind::logic, "conv2d stride 2 needs even spatial extents, got " + shape_to_string(xs));
    ConvDims d;
    d.b = xs[0];
    d.c = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.o = ks[0];
    d.stride = stride;
    d.ho = d.h / stride;
    d.wo = d.w / stride;
    return d;
}

// Y2[O, B*S] -> y[B, O, S] (+bias); and its inverse for the backward pass.
void scatter_bos(const float* y2, float* y, const float* bias, int b_count, int o_count, std::size_t s) {
    for (int b = 0; b < b_count; ++b) {
        for (int o = 0; o < o_count; ++o) {
            const float* src = y2 + static_cast<std::size_t>(o) * b_count * s + static_cast<std::size_t>(b) * s;
            float* dst = y + (static_cast<std::size_t>(b) * o_count + o) * s;
            if (bias) {
                const float bv = bias[o];
                for (std::size_t i = 0; i < s; ++i) dst[i] = src[i] + bv;
            } else {
                std::memcpy(dst, src, sizeof(float) * s);
            }
        }
    }
}

void gather_bos(const float* y, float* y2, int b_count, int o_count, std::size_t s) {
    for (int b = 0; b < b_count; ++b)
        for (int o = 0; o < o_count; ++o)
            std::memcpy(y2 + static_cast<std::size_t>(o) * b_count * s + static_cast<std::size_t>(b) * s,
                        y + (static_cast<std::size_t>(b) * o_count + o) * s, sizeof(float) * s);
}

}  // namespace

void ParamSet::add(Parameter& p) {
    if (find(p.name)) raise(ErrorKind::logic, "duplicate parameter name '" + p.name + "'");
    params_.push_back(&p);
}

Parameter* ParamSet::find(const std::string& name) const {
    for (Parameter* p : params_)
        if (p->name == name) return p;
    return nullptr;
}

void ParamSet::zero_grads() {
    for (Parameter* p : params_) p->zero_grad();
}

std::size_t ParamSet::total_elements() const {
    std::size_t n = 0;
    for (const Parameter* p : params_) n += p->value.size();
    return n;
}

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        raise(ErrorKind::logic, "invalid graph variable");
}

const Tensor& Graph::value(Var v) const {
    check(v);
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

float Graph::scalar_value(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) raise(ErrorKind::logic, "expected scalar, got " + t.shape_str());
    return t[0];
}

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
    return n.grad;
}

Var Graph::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    return {push(std::move(n))};
}

Var Graph::param(Parameter& p) {
    if (!p.grad.same_shape(p.value)) raise(ErrorKind::logic, "parameter '" + p.name + "' grad/value shape mismatch");
    Node n;
    n.value = p.value;
    n.bound = &p;
    n.needs_grad = true;
    return {push(std::move(n))};
}

Var Graph::unary(Var a, Tensor value, std::function<void(Graph&, int)> back) {
    check(a);
    Node n;
    n.value = std::move(value);
    n.parents[0] = a.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    return {push(std::move(n))};
}

#define USRA_SELF nodes_[static_cast<std::size_t>(id)]
#define USRA_PARENT(k) g.nodes_[static_cast<std::size_t>(g.nodes_[static_cast<std::size_t>(id)].parents[k])]

Var Graph::add(Var a, Var b) {
    check(a);
    check(b);
    const Tensor &ta = value(a), &tb = value(b);
    if (!ta.same_shape(tb))
        raise(ErrorKind::logic, "add shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = Tensor::uninit(ta.shape());
    marr(out) = carr(ta) + carr(tb);
    Node n;
    n.value = std::move(out);
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad || nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            if (USRA_PARENT(0).needs_grad) marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(gr);
            if (USRA_PARENT(1).needs_grad) marr(g.grad_buffer(g.USRA_SELF.parents[1])) += carr(gr);
        };
    return {push(std::move(n))};
}

Var Graph::sub(Var a, Var b) {
    check(a);
    check(b);
    const Tensor &ta = value(a), &tb = value(b);
    if (!ta.same_shape(tb))
        raise(ErrorKind::logic, "sub shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = Tensor::uninit(ta.shape());
    marr(out) = carr(ta) - carr(tb);
    Node n;
    n.value = std::move(out);
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad || nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            if (USRA_PARENT(0).needs_grad) marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(gr);
            if (USRA_PARENT(1).needs_grad) marr(g.grad_buffer(g.USRA_SELF.parents[1])) -= carr(gr);
        };
    return {push(std::move(n))};
}

Var Graph::mul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor &ta = value(a), &tb = value(b);
    if (!ta.same_shape(tb))
        raise(ErrorKind::logic, "mul shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = Tensor::uninit(ta.shape());
    marr(out) = carr(ta) * carr(tb);
    Node n;
    n.value = std::move(out);
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad || nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            if (USRA_PARENT(0).needs_grad)
                marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(gr) * carr(USRA_PARENT(1).value);
            if (USRA_PARENT(1).needs_grad)
                marr(g.grad_buffer(g.USRA_SELF.parents[1])) += carr(gr) * carr(USRA_PARENT(0).value);
        };
    return {push(std::move(n))};
}

Var Graph::scale(Var a, float s) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)) * s;
    return unary(a, std::move(out), [s](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad) * s;
    });
}

Var Graph::add_scalar(Var a, float s) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)) + s;
    return unary(a, std::move(out), [](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad);
    });
}

Var Graph::tanh(Var a) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)).tanh();
    return unary(a, std::move(out), [](Graph& g, int id) {
        const auto y = carr(g.USRA_SELF.value);
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad) * (1.0f - y * y);
    });
}

Var Graph::sigmoid(Var a) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = 1.0f / (1.0f + (-carr(value(a))).exp());
    return unary(a, std::move(out), [](Graph& g, int id) {
        const auto y = carr(g.USRA_SELF.value);
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad) * y * (1.0f - y);
    });
}

Var Graph::exp(Var a) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)).exp();
    return unary(a, std::move(out), [](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad) * carr(g.USRA_SELF.value);
    });
}

Var Graph::square(Var a) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)).square();
    return unary(a, std::move(out), [](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) +=
            2.0f * carr(g.USRA_SELF.grad) * carr(USRA_PARENT(0).value);
    });
}

Var Graph::abs(Var a) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)).abs();
    return unary(a, std::move(out), [](Graph& g, int id) {
        // subgradient 0 at the kink
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) +=
            carr(g.USRA_SELF.grad) * carr(USRA_PARENT(0).value).sign();
    });
}

Var Graph::clamp(Var a, float lo, float hi) {
    Tensor out = Tensor::uninit(value(a).shape());
    marr(out) = carr(value(a)).min(hi).max(lo);
    return unary(a, std::move(out), [lo, hi](Graph& g, int id) {
        const auto x = carr(USRA_PARENT(0).value);
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) +=
            carr(g.USRA_SELF.grad) * ((x >= lo) && (x <= hi)).cast<float>();
    });
}

Var Graph::reshape(Var a, std::vector<int> shape) {
    const Tensor& ta = value(a);
    if (shape_numel(shape) != ta.size())
        raise(ErrorKind::logic, "reshape " + ta.shape_str() + " -> " + shape_to_string(shape) + " changes size");
    Tensor out = Tensor::uninit(std::move(shape));
    std::memcpy(out.data(), ta.data(), ta.size() * sizeof(float));
    return unary(a, std::move(out), [](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += carr(g.USRA_SELF.grad);
    });
}

Var Graph::slice_rows(Var a, int r0, int r1) {
    const Tensor& ta = value(a);
    if (ta.rank() < 1 || r0 < 0 || r1 <= r0 || r1 > ta.dim(0))
        raise(ErrorKind::logic, "slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                                    ta.shape_str());
    const std::size_t row = ta.size() / static_cast<std::size_t>(ta.dim(0));
    std::vector<int> shape = ta.shape();
    shape[0] = r1 - r0;
    Tensor out = Tensor::uninit(std::move(shape));
    std::memcpy(out.data(), ta.data() + row * static_cast<std::size_t>(r0), out.size() * sizeof(float));
    return unary(a, std::move(out), [r0, row](Graph& g, int id) {
        const Tensor& gr = g.USRA_SELF.grad;
        Tensor& ga = g.grad_buffer(g.USRA_SELF.parents[0]);
        MapArr(ga.data() + row * static_cast<std::size_t>(r0), static_cast<Eigen::Index>(gr.size())) += carr(gr);
    });
}

Var Graph::concat_rows(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    if (ta.rank() != tb.rank() || ta.rank() < 1)
        raise(ErrorKind::logic, "concat_rows rank mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    for (int d = 1; d < ta.rank(); ++d)
        if (ta.dim(d) != tb.dim(d))
            raise(ErrorKind::logic, "concat_rows trailing mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    std::vector<int> shape = ta.shape();
    shape[0] += tb.dim(0);
    Tensor out = Tensor::uninit(std::move(shape));
    std::memcpy(out.data(), ta.data(), ta.size() * sizeof(float));
    std::memcpy(out.data() + ta.size(), tb.data(), tb.size() * sizeof(float));
    const std::size_t asize = ta.size();
    Node n;
    n.value = std::move(out);
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad || nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [asize](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            if (USRA_PARENT(0).needs_grad) {
                Tensor& ga = g.grad_buffer(g.USRA_SELF.parents[0]);
                marr(ga) += CMapArr(gr.data(), static_cast<Eigen::Index>(asize));
            }
            if (USRA_PARENT(1).needs_grad) {
                Tensor& gb = g.grad_buffer(g.USRA_SELF.parents[1]);
                marr(gb) += CMapArr(gr.data() + asize, static_cast<Eigen::Index>(gr.size() - asize));
            }
        };
    return {push(std::move(n))};
}

Var Graph::concat_cols(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(0) != tb.dim(0))
        raise(ErrorKind::logic, "concat_cols needs [B,N1],[B,N2]; got " + ta.shape_str() + " and " + tb.shape_str());
    const int bsz = ta.dim(0), n1 = ta.dim(1), n2 = tb.dim(1);
    Tensor out = Tensor::uninit({bsz, n1 + n2});
    for (int r = 0; r < bsz; ++r) {
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (n1 + n2), ta.data() + static_cast<std::size_t>(r) * n1,
                    sizeof(float) * static_cast<std::size_t>(n1));
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (n1 + n2) + n1,
                    tb.data() + static_cast<std::size_t>(r) * n2, sizeof(float) * static_cast<std::size_t>(n2));
    }
    Node n;
    n.value = std::move(out);
    n.parents[0] = a.id;
    n.parents[1] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad || nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [n1, n2, bsz](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            if (USRA_PARENT(0).needs_grad) {
                Tensor& ga = g.grad_buffer(g.USRA_SELF.parents[0]);
                for (int r = 0; r < bsz; ++r)
                    for (int c = 0; c < n1; ++c)
                        ga[static_cast<std::size_t>(r) * n1 + c] += gr[static_cast<std::size_t>(r) * (n1 + n2) + c];
            }
            if (USRA_PARENT(1).needs_grad) {
                Tensor& gb = g.grad_buffer(g.USRA_SELF.parents[1]);
                for (int r = 0; r < bsz; ++r)
                    for (int c = 0; c < n2; ++c)
                        gb[static_cast<std::size_t>(r) * n2 + c] +=
                            gr[static_cast<std::size_t>(r) * (n1 + n2) + n1 + c];
            }
        };
    return {push(std::move(n))};
}

Var Graph::dense(Var x, Var w, Var b) {
    check(x);
    check(w);
    check(b);
    const Tensor &tx = value(x), &tw = value(w), &tb = value(b);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(0) || tb.rank() != 1 || tb.dim(0) != tw.dim(1))
        raise(ErrorKind::logic,
              "dense shapes: x " + tx.shape_str() + " w " + tw.shape_str() + " b " + tb.shape_str());
    const int bsz = tx.dim(0), in = tx.dim(1), out_n = tw.dim(1);
    Tensor out = Tensor::uninit({bsz, out_n});
    MapMat(out.data(), bsz, out_n).noalias() = CMapMat(tx.data(), bsz, in) * CMapMat(tw.data(), in, out_n);
    for (int r = 0; r < bsz; ++r) MapArr(out.data() + static_cast<std::size_t>(r) * out_n, out_n) += carr(tb);
    Node n;
    n.value = std::move(out);
    n.parents[0] = x.id;
    n.parents[1] = w.id;
    n.parents[2] = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(x.id)].needs_grad ||
                   nodes_[static_cast<std::size_t>(w.id)].needs_grad ||
                   nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    if (n.needs_grad)
        n.back = [bsz, in, out_n](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            CMapMat gy(gr.data(), bsz, out_n);
            if (USRA_PARENT(0).needs_grad) {
                MapMat gx(g.grad_buffer(g.USRA_SELF.parents[0]).data(), bsz, in);
                gx.noalias() += gy * CMapMat(USRA_PARENT(1).value.data(), in, out_n).transpose();
            }
            if (USRA_PARENT(1).needs_grad) {
                MapMat gw(g.grad_buffer(g.USRA_SELF.parents[1]).data(), in, out_n);
                gw.noalias() += CMapMat(USRA_PARENT(0).value.data(), bsz, in).transpose() * gy;
            }
            if (USRA_PARENT(2).needs_grad) {
                MapArr gb(g.grad_buffer(g.USRA_SELF.parents[2]).data(), out_n);
                gb += gy.colwise().sum().transpose().array();
            }
        };
    return {push(std::move(n))};
}

Var Graph::conv2d(Var x, Var k, Var bias, int stride, Act activation) {
    check(x);
    check(k);
    const bool rank3 = value(x).rank() == 3;
    Var xin = rank3 ? reshape(x, {1, value(x).dim(0), value(x).dim(1), value(x).dim(2)}) : x;
    const Tensor &tx = value(xin), &tk = value(k);
    const ConvDims d = conv_dims(tx.shape(), tk.shape(), stride);
    const std::size_t s_out = static_cast<std::size_t>(d.ho) * d.wo;
    const bool x_grad = nodes_[static_cast<std::size_t>(xin.id)].needs_grad;
    const bool k_grad = nodes_[static_cast<std::size_t>(k.id)].needs_grad;

    // cols is retained for the kernel gradient when one will be needed;
    // otherwise scratch is enough
    std::shared_ptr<float[]> cols_keep;
    float* cols;
    if (k_grad) {
        cols_keep = std::shared_ptr<float[]>(aligned_alloc_floats(d.cols_rows() * d.cols_n()).release(),
                                             AlignedFree{});
        cols = cols_keep.get();
    } else {
        cols = scratch(0, d.cols_rows() * d.cols_n());
    }
    im2col(tx.data(), cols, d);
    float* y2 = scratch(1, static_cast<std::size_t>(d.o) * d.cols_n());
    MapMat(y2, d.o, static_cast<Eigen::Index>(d.cols_n())).noalias() =
        CMapMat(tk.data(), d.o, static_cast<Eigen::Index>(d.cols_rows())) *
        CMapMat(cols, static_cast<Eigen::Index>(d.cols_rows()), static_cast<Eigen::Index>(d.cols_n()));
    Tensor out = Tensor::uninit({d.b, d.o, d.ho, d.wo});
    scatter_bos(y2, out.data(), bias.valid() ? value(bias).data() : nullptr, d.b, d.o, s_out);
    if (activation == Act::tanh_act)
        marr(out) = carr(out).tanh();

    Node n;
    n.value = std::move(out);
    n.parents[0] = xin.id;
    n.parents[1] = k.id;
    n.parents[2] = bias.valid() ? bias.id : -1;
    n.needs_grad = x_grad || k_grad || (bias.valid() && nodes_[static_cast<std::size_t>(bias.id)].needs_grad);
    if (n.needs_grad)
        n.back = [d, s_out, cols_keep, activation](Graph& g, int id) {
            const Tensor& gr = g.USRA_SELF.grad;
            const Eigen::Index rows = static_cast<Eigen::Index>(d.cols_rows());
            const Eigen::Index cn = static_cast<Eigen::Index>(d.cols_n());
            float* gy2 = scratch(0, static_cast<std::size_t>(d.o) * d.cols_n());
            Tensor gpre;
            const float* gy_src = gr.data();
            if (activation == Act::tanh_act) {
                // fold d tanh = 1 - y^2 into the incoming gradient
                gpre = Tensor::uninit(gr.shape());
                const auto y = carr(g.USRA_SELF.value);
                marr(gpre) = carr(gr) * (1.0f - y * y);
                gy_src = gpre.data();
            }
            gather_bos(gy_src, gy2, d.b, d.o, s_out);
            CMapMat gy2m(gy2, d.o, cn);
            const int bias_id = g.USRA_SELF.parents[2];
            if (bias_id >= 0 && g.nodes_[static_cast<std::size_t>(bias_id)].needs_grad)
                MapArr(g.grad_buffer(bias_id).data(), d.o) += gy2m.rowwise().sum().array();
            if (USRA_PARENT(1).needs_grad) {
                MapMat gk(g.grad_buffer(g.USRA_SELF.parents[1]).data(), d.o, rows);
                gk.noalias() += gy2m * CMapMat(cols_keep.get(), rows, cn).transpose();
            }
            if (USRA_PARENT(0).needs_grad) {
                Tensor& gx = g.grad_buffer(g.USRA_SELF.parents[0]);
                if (d.stride == 1) {
                    // input gradient of a stride-1 replicate conv equals a
                    // zero-padded conv of the gradient with the flipped
                    // kernel plus a ring of edge-fold terms
                    conv_input_grad_stride1(gy_src, USRA_PARENT(1).value.data(), gx.data(), d);
                } else {
                    // stride 2: one lowered GEMM, then scatter per sample
                    const std::size_t s_block = static_cast<std::size_t>(d.ho) * d.wo;
                    float* gcols = scratch(2, d.cols_rows() * d.cols_n());
                    RowMat kt = CMapMat(USRA_PARENT(1).value.data(), d.o, rows).transpose();
                    MapMat(gcols, rows, cn).noalias() = kt * gy2m;
                    for (int b = 0; b < d.b; ++b)
                        col2im_sample_add(gcols + static_cast<std::size_t>(b) * s_block, d.cols_n(),
                                          gx.data() + static_cast<std::size_t>(b) * d.c * d.h * d.w, d);
                }
            }
        };
    Var res{push(std::move(n))};
    return rank3 ? reshape(res, {d.o, d.ho, d.wo}) : res;
}

Var Graph::decimate2(Var a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 4 || ta.dim(2) % 2 || ta.dim(3) % 2)
        raise(ErrorKind::logic, "decimate2 needs [B,C,2h,2w], got " + ta.shape_str());
    const int bc = ta.dim(0) * ta.dim(1), h = ta.dim(2), w = ta.dim(3);
    Tensor out = Tensor::uninit({ta.dim(0), ta.dim(1), h / 2, w / 2});
    for (int p = 0; p < bc; ++p)
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j)
                out[(static_cast<std::size_t>(p) * (h / 2) + i) * (w / 2) + j] =
                    ta[(static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j];
    return unary(a, std::move(out), [bc, h, w](Graph& g, int id) {
        const Tensor& gr = g.USRA_SELF.grad;
        Tensor& gx = g.grad_buffer(g.USRA_SELF.parents[0]);
        for (int p = 0; p < bc; ++p)
            for (int i = 0; i < h / 2; ++i)
                for (int j = 0; j < w / 2; ++j)
                    gx[(static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j] +=
                        gr[(static_cast<std::size_t>(p) * (h / 2) + i) * (w / 2) + j];
    });
}

Var Graph::upsample2(Var a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 4) raise(ErrorKind::logic, "upsample2 needs [B,C,H,W], got " + ta.shape_str());
    const int bc = ta.dim(0) * ta.dim(1), h = ta.dim(2), w = ta.dim(3);
    Tensor out = Tensor::uninit({ta.dim(0), ta.dim(1), 2 * h, 2 * w});
    for (int p = 0; p < bc; ++p)
        for (int i = 0; i < 2 * h; ++i) {
            const float* src = ta.data() + (static_cast<std::size_t>(p) * h + i / 2) * w;
            float* dst = out.data() + (static_cast<std::size_t>(p) * 2 * h + i) * 2 * w;
            for (int j = 0; j < w; ++j) {
                dst[2 * j] = src[j];
                dst[2 * j + 1] = src[j];
            }
        }
    return unary(a, std::move(out), [bc, h, w](Graph& g, int id) {
        const Tensor& gr = g.USRA_SELF.grad;
        Tensor& gx = g.grad_buffer(g.USRA_SELF.parents[0]);
        for (int p = 0; p < bc; ++p)
            for (int i = 0; i < 2 * h; ++i) {
                const float* src = gr.data() + (static_cast<std::size_t>(p) * 2 * h + i) * 2 * w;
                float* dst = gx.data() + (static_cast<std::size_t>(p) * h + i / 2) * w;
                for (int j = 0; j < w; ++j) dst[j] += src[2 * j] + src[2 * j + 1];
            }
    });
}

Var Graph::sum(Var a) {
    const Tensor& ta = value(a);
    const double total = carr(ta).cast<double>().sum();
    Tensor out({1}, {static_cast<float>(total)});
    return unary(a, std::move(out), [](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += g.USRA_SELF.grad[0];
    });
}

Var Graph::mean(Var a) {
    const Tensor& ta = value(a);
    const double total = carr(ta).cast<double>().sum();
    const float inv_n = 1.0f / static_cast<float>(ta.size());
    Tensor out({1}, {static_cast<float>(total / static_cast<double>(ta.size()))});
    return unary(a, std::move(out), [inv_n](Graph& g, int id) {
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) += g.USRA_SELF.grad[0] * inv_n;
    });
}

Var Graph::mse_against(Var pred, const Tensor& target) {
    const Tensor& tp = value(pred);
    if (!tp.same_shape(target))
        raise(ErrorKind::logic, "mse_against shape mismatch " + tp.shape_str() + " vs " + target.shape_str());
    const auto n = static_cast<Eigen::Index>(tp.size());
    const double sum = (carr(tp) - carr(target)).cast<double>().square().sum();
    Tensor out({1}, {static_cast<float>(sum / static_cast<double>(tp.size()))});
    auto tgt = std::make_shared<Tensor>(target);
    return unary(pred, std::move(out), [tgt, n](Graph& g, int id) {
        const float coeff = g.USRA_SELF.grad[0] * 2.0f / static_cast<float>(n);
        marr(g.grad_buffer(g.USRA_SELF.parents[0])) +=
            coeff * (carr(USRA_PARENT(0).value) - carr(*tgt));
    });
}

Var Graph::gather_cols(Var q, std::vector<int> idx) {
    const Tensor& tq = value(q);
    if (tq.rank() != 2 || static_cast<std::size_t>(tq.dim(0)) != idx.size())
        raise(ErrorKind::logic, "gather_cols: q " + tq.shape_str() + " vs " + std::to_string(idx.size()) + " indices");
    const int bsz = tq.dim(0), cols = tq.dim(1);
    Tensor out = Tensor::uninit({bsz});
    for (int r = 0; r < bsz; ++r) {
        if (idx[static_cast<std::size_t>(r)] < 0 || idx[static_cast<std::size_t>(r)] >= cols)
            raise(ErrorKind::logic, "gather_cols index out of range");
        out[static_cast<std::size_t>(r)] = tq[static_cast<std::size_t>(r) * cols + idx[static_cast<std::size_t>(r)]];
    }
    return unary(q, std::move(out), [idx = std::move(idx), cols](Graph& g, int id) {
        const Tensor& gr = g.USRA_SELF.grad;
        Tensor& gq = g.grad_buffer(g.USRA_SELF.parents[0]);
        for (std::size_t r = 0; r < idx.size(); ++r)
            gq[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(idx[r])] += gr[r];
    });
}

void Graph::backward(Var loss) {
    check(loss);
    Node& top = nodes_[static_cast<std::size_t>(loss.id)];
    if (top.value.size() != 1)
        raise(ErrorKind::logic, "backward needs a scalar loss, got " + top.value.shape_str());
    if (!top.value.all_finite()) raise(ErrorKind::logic, "backward on non-finite loss");
    // each sweep computes the full gradient from scratch; only Parameter.grad
    // accumulates across calls
    for (Node& n : nodes_) n.grad = Tensor{};
    grad_buffer(loss.id).fill(1.0f);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.back) n.back(*this, id);
        if (n.bound) marr(n.bound->grad) += carr(n.grad);
    }
}

Tensor conv2d_eval(const Tensor& x, const Tensor& k, const Tensor* bias, int stride) {
    Graph g;
    Var out = g.conv2d(g.leaf(x), g.leaf(k), bias ? g.leaf(*bias) : Var{}, stride);
    return g.value(out);
}

}  // namespace usra
