#pragma once

// Finite-difference gradient checks for every differentiable primitive.
// Shared between the unit tests and the acceptance suite.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "texvit/gradcheck.hpp"
#include "texvit/ops.hpp"

namespace texvit::gradsuite {



using D = double;
using BuildFn = std::function<Var<D>(Ctx<D>&, std::vector<Var<D>>&)>;

// Runs one finite-difference check: inputs become store parameters, the op
// output is projected onto a fixed random tensor to form a scalar loss.
inline double check_op(const std::vector<Shape>& shapes, const BuildFn& build, RngState& rng,
                       int probes = 4, double eps = 1e-5, double lo = -1.0, double hi = 1.0) {
    ParamStore<D> store;
    for (size_t i = 0; i < shapes.size(); ++i) {
        Tensor<D>& p = store.create("p" + std::to_string(i), shapes[i]);
        for (int64_t j = 0; j < p.numel(); ++j) p[j] = rng.uniform(lo, hi);
    }
    // Projection weights fixed across evals so the loss is a pure function of
    // the parameters.
    Tensor<D> proj;
    bool proj_ready = false;
    RngState proj_rng(rng.next_u64());
    auto eval = [&](bool with_grad) -> double {
        Tape<D> tape(with_grad);
        Ctx<D> ctx{tape, store};
        std::vector<Var<D>> vars;
        for (size_t i = 0; i < shapes.size(); ++i)
            vars.push_back(ctx.param("p" + std::to_string(i)));
        Var<D> out = build(ctx, vars);
        if (!proj_ready) {
            proj = rng_uniform<D>(proj_rng, out.shape(), -1.0, 1.0);
            proj_ready = true;
        }
        Var<D> loss = sum_all(mul(out, ctx.input(proj)));
        if (with_grad) {
            store.zero_grads();
            tape.backward(loss.id);
            ctx.collect_grads();
        }
        return static_cast<double>(loss.val()[0]);
    };
    GradCheckReport report = grad_check<D>(eval, store, probes, eps, rng);
    return report.max_rel_err;
}

struct OpResult {
    std::string name;
    double max_rel_err;
};

// Every differentiable primitive, `instances` random shapes each; a non-empty
// `filter` restricts the run to that one op.
inline std::vector<OpResult> run_all(int instances, uint64_t seed,
                                     const std::string& filter = "") {
    std::vector<OpResult> results;
    auto run = [&](const std::string& name,
                   const std::function<double(RngState&)>& one_instance) {
        if (!filter.empty() && name != filter) return;
        RngState rng(seed ^ fnv1a64(name));
        double worst = 0.0;
        for (int i = 0; i < instances; ++i) worst = std::max(worst, one_instance(rng));
        results.push_back({name, worst});
    };

    auto dims = [](RngState& rng, int64_t lo, int64_t hi) {
        return lo + rng.uniform_int(hi - lo + 1);
    };

    run("add", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 1, 5)};
        return check_op({s, s}, [](Ctx<D>&, auto& v) { return add(v[0], v[1]); }, rng);
    });
    run("sub", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 1, 5)};
        return check_op({s, s}, [](Ctx<D>&, auto& v) { return sub(v[0], v[1]); }, rng);
    });
    run("mul", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 1, 5)};
        return check_op({s, s}, [](Ctx<D>&, auto& v) { return mul(v[0], v[1]); }, rng);
    });
    run("scale", [&](RngState& rng) {
        Shape s{dims(rng, 2, 6)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return scale(v[0], D(-1.75)); }, rng);
    });
    run("relu", [&](RngState& rng) {
        Shape s{dims(rng, 2, 8)};
        // keep samples away from the kink at zero
        return check_op({s}, [](Ctx<D>&, auto& v) { return relu(v[0]); }, rng, 4, 1e-5, 0.05,
                        1.0);
    });
    run("gelu", [&](RngState& rng) {
        Shape s{dims(rng, 2, 8)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return gelu(v[0]); }, rng, 4, 1e-5, -3.0,
                        3.0);
    });
    run("matmul", [&](RngState& rng) {
        const int64_t m = dims(rng, 1, 4), k = dims(rng, 1, 4), n = dims(rng, 1, 4);
        return check_op({{m, k}, {k, n}},
                        [](Ctx<D>&, auto& v) { return matmul(v[0], v[1]); }, rng);
    });
    run("bmm", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 3), m = dims(rng, 1, 3), k = dims(rng, 1, 3),
                      n = dims(rng, 1, 3);
        return check_op({{b, m, k}, {b, k, n}},
                        [](Ctx<D>&, auto& v) { return bmm(v[0], v[1]); }, rng);
    });
    run("bmm_nt", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 3), m = dims(rng, 1, 3), k = dims(rng, 1, 3),
                      n = dims(rng, 1, 3);
        return check_op({{b, m, k}, {b, n, k}},
                        [](Ctx<D>&, auto& v) { return bmm_nt(v[0], v[1]); }, rng);
    });
    run("linear", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 3), t = dims(rng, 1, 3), din = dims(rng, 1, 4),
                      dout = dims(rng, 1, 4);
        return check_op({{b, t, din}, {din, dout}, {dout}},
                        [](Ctx<D>&, auto& v) { return linear(v[0], v[1], v[2]); }, rng);
    });
    run("conv2d", [&](RngState& rng) {
        const int64_t n = dims(rng, 1, 2), c = dims(rng, 1, 3), o = dims(rng, 1, 3);
        const int64_t h = dims(rng, 3, 6), w = dims(rng, 3, 6);
        const int64_t k = dims(rng, 1, 3);
        const int64_t stride = dims(rng, 1, 2), pad = dims(rng, 0, 1);
        return check_op({{n, c, h, w}, {o, c, k, k}, {o}},
                        [stride, pad](Ctx<D>&, auto& v) {
                            return conv2d(v[0], v[1], v[2], stride, pad);
                        },
                        rng);
    });
    run("pool2d_max", [&](RngState& rng) {
        const int64_t h = dims(rng, 4, 6);
        return check_op({{1, 2, h, h}},
                        [](Ctx<D>&, auto& v) { return pool2d(v[0], PoolKind::Max, 2, 2); }, rng);
    });
    run("pool2d_avg", [&](RngState& rng) {
        const int64_t h = dims(rng, 4, 6);
        return check_op({{2, 1, h, h}},
                        [](Ctx<D>&, auto& v) { return pool2d(v[0], PoolKind::Avg, 2, 1); }, rng);
    });
    run("adaptive_avg_pool2d", [&](RngState& rng) {
        const int64_t h = dims(rng, 3, 8);
        const int64_t oh = dims(rng, 1, h);
        return check_op({{1, 2, h, h}},
                        [oh](Ctx<D>&, auto& v) { return adaptive_avg_pool2d(v[0], oh, oh); },
                        rng);
    });
    run("softmax", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 2, 6)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return softmax_lastdim(v[0]); }, rng, 4,
                        1e-5, -2.0, 2.0);
    });
    run("log_softmax", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 2, 6)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return log_softmax_lastdim(v[0]); }, rng, 4,
                        1e-5, -2.0, 2.0);
    });
    run("layer_norm", [&](RngState& rng) {
        const int64_t rows = dims(rng, 1, 4), d = dims(rng, 2, 8);
        return check_op({{rows, d}, {d}, {d}},
                        [](Ctx<D>&, auto& v) { return layer_norm(v[0], v[1], v[2]); }, rng);
    });
    run("batch_norm_train", [&](RngState& rng) {
        const int64_t n = dims(rng, 2, 3), c = dims(rng, 1, 3), h = dims(rng, 2, 4);
        auto rm = std::make_shared<Tensor<D>>(Shape{c});
        auto rv = std::make_shared<Tensor<D>>(Shape{c}, D(1));
        auto cnt = std::make_shared<Tensor<D>>(Shape{1});
        return check_op({{n, c, h, h}, {c}, {c}},
                        [rm, rv, cnt](Ctx<D>&, auto& v) {
                            return batch_norm(v[0], v[1], v[2], *rm, *rv, *cnt, NormMode::Train);
                        },
                        rng);
    });
    run("batch_norm_infer", [&](RngState& rng) {
        const int64_t n = dims(rng, 1, 2), c = dims(rng, 1, 3), h = dims(rng, 2, 4);
        auto rm = std::make_shared<Tensor<D>>(Shape{c});
        auto rv = std::make_shared<Tensor<D>>(Shape{c}, D(1));
        auto cnt = std::make_shared<Tensor<D>>(Shape{1});
        (*cnt)[0] = D(1);
        for (int64_t i = 0; i < c; ++i) {
            (*rm)[i] = rng.uniform(-0.5, 0.5);
            (*rv)[i] = rng.uniform(0.5, 2.0);
        }
        return check_op({{n, c, h, h}, {c}, {c}},
                        [rm, rv, cnt](Ctx<D>&, auto& v) {
                            return batch_norm(v[0], v[1], v[2], *rm, *rv, *cnt, NormMode::Infer);
                        },
                        rng);
    });
    run("group_norm_all", [&](RngState& rng) {
        const int64_t n = dims(rng, 1, 3), c = dims(rng, 1, 3), h = dims(rng, 2, 4);
        return check_op({{n, c, h, h}, {c}, {c}},
                        [](Ctx<D>&, auto& v) { return group_norm_all(v[0], v[1], v[2]); }, rng);
    });
    run("gram", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 2), c = dims(rng, 1, 4), m = dims(rng, 1, 6);
        const bool norm = rng.uniform() < 0.5;
        return check_op({{b, c, m}},
                        [norm](Ctx<D>&, auto& v) { return gram_batched(v[0], norm); }, rng);
    });
    run("unfold_patches", [&](RngState& rng) {
        const int64_t p = dims(rng, 1, 2);
        const int64_t g = dims(rng, 1, 3) * p;
        return check_op({{1, 2, g, g}},
                        [p](Ctx<D>&, auto& v) { return unfold_patches(v[0], p); }, rng);
    });
    run("concat", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 3), d = dims(rng, 1, 4);
        const int64_t r1 = dims(rng, 1, 3), r2 = dims(rng, 1, 3);
        return check_op({{b, r1, d}, {b, r2, d}},
                        [](Ctx<D>&, auto& v) { return concat(v[0], v[1], 1); }, rng);
    });
    run("slice", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 2), r = dims(rng, 2, 5), d = dims(rng, 1, 3);
        const int64_t start = rng.uniform_int(r);
        const int64_t len = 1 + rng.uniform_int(r - start);
        return check_op({{b, r, d}},
                        [start, len](Ctx<D>&, auto& v) { return slice(v[0], 1, start, len); },
                        rng);
    });
    run("permute", [&](RngState& rng) {
        Shape s{dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)};
        return check_op({s},
                        [](Ctx<D>&, auto& v) { return permute(v[0], {2, 0, 3, 1}); }, rng);
    });
    run("reshape", [&](RngState& rng) {
        const int64_t a = dims(rng, 1, 4), b = dims(rng, 1, 4);
        return check_op({{a, b}},
                        [a, b](Ctx<D>&, auto& v) { return reshape(v[0], {a * b}); }, rng);
    });
    run("tile_leading", [&](RngState& rng) {
        const int64_t d = dims(rng, 1, 5), b = dims(rng, 1, 4);
        return check_op({{1, d}},
                        [b](Ctx<D>&, auto& v) { return tile_leading(v[0], b); }, rng);
    });
    run("add_broadcast_leading", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 3), t = dims(rng, 1, 4), d = dims(rng, 1, 3);
        return check_op({{b, t, d}, {t, d}},
                        [](Ctx<D>&, auto& v) { return add_broadcast_leading(v[0], v[1]); }, rng);
    });
    run("scale_rows", [&](RngState& rng) {
        const int64_t b = dims(rng, 1, 4), d = dims(rng, 1, 5);
        Tensor<D> coef({b});
        for (int64_t i = 0; i < b; ++i) coef[i] = rng.uniform(0.5, 2.0);
        return check_op({{b, d}},
                        [coef](Ctx<D>&, auto& v) { return scale_rows(v[0], coef); }, rng);
    });
    run("sum_all", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 1, 5)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return sum_all(v[0]); }, rng);
    });
    run("mean_all", [&](RngState& rng) {
        Shape s{dims(rng, 1, 4), dims(rng, 1, 5)};
        return check_op({s}, [](Ctx<D>&, auto& v) { return mean_all(v[0]); }, rng);
    });
    return results;
}

} // namespace texvit::gradsuite
