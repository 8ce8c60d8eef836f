#pragma once

// JSON adapters for the configuration records (checkpoint snapshots and the
// CLI config dump).

#include <json.hpp>

#include "texvit/corrupt.hpp"
#include "texvit/train_config.hpp"
#include "texvit/vit.hpp"

namespace texvit {

inline void to_json(nlohmann::ordered_json& j, const BackboneConfig& c) {
    j = {{"input_channels", c.input_channels},
         {"stage_channels", c.stage_channels},
         {"blocks_per_stage", c.blocks_per_stage},
         {"small_input_mode", c.small_input_mode},
         {"texture_taps", c.texture_taps},
         {"norm_kind", to_string(c.norm_kind)},
         {"gram_channels", c.gram_channels},
         {"texture_channels", c.texture_channels}};
}

inline void from_json(const nlohmann::ordered_json& j, BackboneConfig& c) {
    j.at("input_channels").get_to(c.input_channels);
    j.at("stage_channels").get_to(c.stage_channels);
    j.at("blocks_per_stage").get_to(c.blocks_per_stage);
    j.at("small_input_mode").get_to(c.small_input_mode);
    j.at("texture_taps").get_to(c.texture_taps);
    c.norm_kind = norm_kind_from_string(j.at("norm_kind").get<std::string>());
    j.at("gram_channels").get_to(c.gram_channels);
    j.at("texture_channels").get_to(c.texture_channels);
}

inline void to_json(nlohmann::ordered_json& j, const BranchConfig& c) {
    j = {{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},   {"depth", c.depth},
         {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},   {"drop_path_rate", c.drop_path_rate}};
}

inline void from_json(const nlohmann::ordered_json& j, BranchConfig& c) {
    j.at("patch_size").get_to(c.patch_size);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("depth").get_to(c.depth);
    j.at("heads").get_to(c.heads);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
    j.at("drop_path_rate").get_to(c.drop_path_rate);
}

inline void to_json(nlohmann::ordered_json& j, const TexViTConfig& c) {
    nlohmann::ordered_json backbone, ba, bb;
    to_json(backbone, c.backbone);
    to_json(ba, c.branch_a);
    to_json(bb, c.branch_b);
    j = {{"preset", c.preset},
         {"image_size", c.image_size},
         {"num_classes", c.num_classes},
         {"backbone", backbone},
         {"branch_a", ba},
         {"branch_b", bb},
         {"cross_rounds", c.cross_rounds}};
}

inline void from_json(const nlohmann::ordered_json& j, TexViTConfig& c) {
    j.at("preset").get_to(c.preset);
    j.at("image_size").get_to(c.image_size);
    j.at("num_classes").get_to(c.num_classes);
    from_json(j.at("backbone"), c.backbone);
    from_json(j.at("branch_a"), c.branch_a);
    from_json(j.at("branch_b"), c.branch_b);
    j.at("cross_rounds").get_to(c.cross_rounds);
}

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"adam_beta1", c.adam.beta1},
         {"adam_beta2", c.adam.beta2},
         {"adam_eps", c.adam.eps},
         {"use_mixup", c.use_mixup},
         {"mixup_alpha", c.mixup_alpha},
         {"use_cutmix", c.use_cutmix},
         {"cutmix_alpha", c.cutmix_alpha},
         {"use_randaug", c.use_randaug},
         {"randaug_ops", c.randaug_ops},
         {"randaug_magnitude", c.randaug_magnitude},
         {"use_random_erase", c.use_random_erase},
         {"erase_p", c.erase_p},
         {"erase_area_lo", c.erase_area_lo},
         {"erase_area_hi", c.erase_area_hi},
         {"seed", c.seed},
         {"reproducible", c.reproducible}};
}

inline void from_json(const nlohmann::ordered_json& j, TrainConfig& c) {
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("adam_beta1").get_to(c.adam.beta1);
    j.at("adam_beta2").get_to(c.adam.beta2);
    j.at("adam_eps").get_to(c.adam.eps);
    j.at("use_mixup").get_to(c.use_mixup);
    j.at("mixup_alpha").get_to(c.mixup_alpha);
    j.at("use_cutmix").get_to(c.use_cutmix);
    j.at("cutmix_alpha").get_to(c.cutmix_alpha);
    j.at("use_randaug").get_to(c.use_randaug);
    j.at("randaug_ops").get_to(c.randaug_ops);
    j.at("randaug_magnitude").get_to(c.randaug_magnitude);
    j.at("use_random_erase").get_to(c.use_random_erase);
    j.at("erase_p").get_to(c.erase_p);
    j.at("erase_area_lo").get_to(c.erase_area_lo);
    j.at("erase_area_hi").get_to(c.erase_area_hi);
    j.at("seed").get_to(c.seed);
    j.at("reproducible").get_to(c.reproducible);
}

} // namespace texvit
