#pragma once

// Grad-CAM over backbone stages and texture taps: channel weights are the
// spatial mean of d logit / d activation, the map is ReLU of the weighted
// channel sum, bilinearly upsampled to the input and max-normalized.

#include <string>

#include "texvit/checkpoint.hpp"
#include "texvit/train.hpp"

namespace texvit {

struct Heatmap {
    Tensor<float> values; // (H,W) in [0,1]; max is 1 unless identically 0
    std::string layer;
    int target_class = 0;
};

namespace explain_detail {

inline Tensor<float> bilinear_resize(const Tensor<float>& map, int64_t out_h, int64_t out_w) {
    const int64_t h = map.dim(0), w = map.dim(1);
    Tensor<float> out({out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fy = std::min(static_cast<double>(h - 1), std::max(0.0, fy));
            fx = std::min(static_cast<double>(w - 1), std::max(0.0, fx));
            const int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
            const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double ay = fy - static_cast<double>(y0), ax = fx - static_cast<double>(x0);
            out.at({y, x}) = static_cast<float>(
                (1 - ay) * ((1 - ax) * map.at({y0, x0}) + ax * map.at({y0, x1})) +
                ay * ((1 - ax) * map.at({y1, x0}) + ax * map.at({y1, x1})));
        }
    return out;
}

// Core Grad-CAM combination given activations (1,C,h,w) and their gradients.
inline Tensor<float> weighted_relu_map(const Tensor<float>& act, const Tensor<float>& grad) {
    const int64_t c = act.dim(1), h = act.dim(2), w = act.dim(3);
    Tensor<float> map({h, w});
    for (int64_t ci = 0; ci < c; ++ci) {
        double wc = 0.0;
        for (int64_t i = 0; i < h * w; ++i) wc += grad[ci * h * w + i];
        wc /= static_cast<double>(h * w);
        for (int64_t i = 0; i < h * w; ++i)
            map[i] += static_cast<float>(wc * act[ci * h * w + i]);
    }
    float mx = 0.0f;
    for (int64_t i = 0; i < h * w; ++i) {
        map[i] = std::max(0.0f, map[i]);
        mx = std::max(mx, map[i]);
    }
    if (mx > 0.0f)
        for (int64_t i = 0; i < h * w; ++i) map[i] /= mx;
    return map;
}

} // namespace explain_detail

// target_class -1 selects the predicted class.
inline Heatmap grad_cam(const Checkpoint& ckpt, const Tensor<float>& img, const std::string& layer,
                        int target_class = -1) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ShapeError("grad_cam: expected a (3,H,W) image, got " + shape_str(img.shape()));
    ParamStore<float> store = ckpt.store;
    Tape<float> tape;
    Ctx<float> ctx{tape, store};
    ctx.training = false;
    Tensor<float> batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    Var<float> logits = texvit_forward(ctx, ckpt.config, ctx.input(std::move(batch)));

    auto it = ctx.taps.find(layer);
    if (it == ctx.taps.end() || tape.value(it->second).rank() != 4) {
        std::string known;
        for (const auto& [name, id] : ctx.taps)
            if (tape.value(id).rank() == 4) known += (known.empty() ? "" : ", ") + name;
        throw ContractError("grad_cam: unknown layer `" + layer + "` (available: " + known + ")");
    }

    int cls = target_class;
    if (cls < 0) cls = logits.val().at({0, 0}) >= logits.val().at({0, 1}) ? 0 : 1;
    if (cls > 1) throw ContractError("grad_cam: target class must be 0 or 1");
    Var<float> target = reshape(slice(logits, 1, cls, 1), {1});
    tape.backward(target.id);
    if (!tape.has_grad(it->second))
        throw ContractError("grad_cam: layer `" + layer + "` does not influence the logits");

    Tensor<float> map = explain_detail::weighted_relu_map(tape.value(it->second),
                                                          tape.grad(it->second));
    Heatmap heat;
    heat.values = explain_detail::bilinear_resize(map, img.dim(1), img.dim(2));
    // renormalize after interpolation so the maximum is exactly 1
    float mx = 0.0f;
    for (int64_t i = 0; i < heat.values.numel(); ++i) mx = std::max(mx, heat.values[i]);
    if (mx > 0.0f)
        for (int64_t i = 0; i < heat.values.numel(); ++i) heat.values[i] /= mx;
    heat.layer = layer;
    heat.target_class = cls;
    return heat;
}

// Blue-to-red ramp: value 0 -> (0,0,255), value 1 -> (255,0,0).
inline std::array<uint8_t, 3> heat_color(float v) {
    v = std::min(1.0f, std::max(0.0f, v));
    return {static_cast<uint8_t>(std::lround(255.0f * v)), 0,
            static_cast<uint8_t>(std::lround(255.0f * (1.0f - v)))};
}

// Side-by-side PNG: original on the left, heat blend on the right. The blend
// alpha is 0.5 * heat, so cold regions stay the original image and the
// hottest pixels are a 50% mix with the ramp color.
inline void export_overlay(const Tensor<float>& img, const Heatmap& heat,
                           const std::string& path) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ShapeError("export_overlay: expected a (3,H,W) image");
    if (heat.values.dim(0) != img.dim(1) || heat.values.dim(1) != img.dim(2))
        throw ShapeError("export_overlay: heatmap " + shape_str(heat.values.shape()) +
                         " does not match image " + shape_str(img.shape()));
    const int64_t h = img.dim(1), w = img.dim(2);
    ImageU8 out;
    out.height = h;
    out.width = 2 * w;
    out.rgb.resize(static_cast<size_t>(out.width * out.height * 3));
    ImageU8 orig = to_image_u8(img);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const float v = heat.values.at({y, x});
            const auto color = heat_color(v);
            const float alpha = 0.5f * v;
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = orig.at(y, x, c);
                const float blended = (1.0f - alpha) * static_cast<float>(orig.at(y, x, c)) +
                                      alpha * static_cast<float>(color[static_cast<size_t>(c)]);
                out.at(y, w + x, c) = static_cast<uint8_t>(std::lround(blended));
            }
        }
    write_png(path, out);
}

} // namespace texvit
