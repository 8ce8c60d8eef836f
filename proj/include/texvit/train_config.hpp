#pragma once

// Training hyperparameters: learning rate 0.01, batch size 64, 100 epochs,
// Adam(0.9, 0.999, 1e-8), plus the augmentation toggles.

#include <cstdint>

#include "texvit/optim.hpp"

namespace texvit {

struct TrainConfig {
    double learning_rate = 0.01;
    int batch_size = 64;
    int epochs = 100;
    AdamConfig adam;

    bool use_mixup = true;
    double mixup_alpha = 0.2;
    bool use_cutmix = true;
    double cutmix_alpha = 1.0;
    bool use_randaug = true;
    int randaug_ops = 2;
    int randaug_magnitude = 5;
    bool use_random_erase = true;
    double erase_p = 0.25;
    double erase_area_lo = 0.02;
    double erase_area_hi = 0.2;

    uint64_t seed = 42;
    bool reproducible = true;

    void validate() const {
        if (learning_rate <= 0.0) throw ContractError("train: learning_rate must be positive");
        if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
        if (epochs < 1) throw ContractError("train: epochs must be >= 1");
        if (adam.beta1 <= 0.0 || adam.beta1 >= 1.0 || adam.beta2 <= 0.0 || adam.beta2 >= 1.0 ||
            adam.eps <= 0.0)
            throw ContractError("train: adam parameters out of range");
        if (mixup_alpha <= 0.0 || cutmix_alpha <= 0.0)
            throw ContractError("train: mixing alphas must be positive");
        if (randaug_ops < 0 || randaug_magnitude < 0 || randaug_magnitude > 10)
            throw ContractError("train: rand-augment settings out of range");
        if (erase_p < 0.0 || erase_p > 1.0 || erase_area_lo < 0.0 ||
            erase_area_hi < erase_area_lo || erase_area_hi > 1.0)
            throw ContractError("train: random-erase settings out of range");
    }
};

} // namespace texvit
