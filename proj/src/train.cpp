#include "spikefuse/train.hpp"

#include <cmath>
#include <fstream>

#include "spikefuse/optim.hpp"

namespace spikefuse {

TrainResult train_model(TrackerModel& model,
                        const std::vector<std::vector<MultimodalSample>>& sequences,
                        const std::string& log_path) {
    const RunConfig& cfg = model.config();
    if (sequences.empty()) throw ConfigError("training needs at least one sequence");
    for (const auto& seq : sequences)
        if (seq.size() < 2) throw ConfigError("every training sequence needs >= 2 frames");

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw ParseError("cannot write training log " + log_path);
        log << "# step total cls reg lr_backbone lr_other\n";
    }

    Rng rng(cfg.seed);
    Rng sampler = rng.fork(0x5a3f);
    Rng jitter = rng.fork(0x77aa);
    Rng dropper = rng.fork(0xd50f);

    Adam adam;
    TrainResult result;
    int candidates = 4;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr_backbone = lr_schedule(cfg.lr_backbone, epoch, cfg.lr_decay);
        double lr_other = lr_schedule(cfg.lr_other, epoch, cfg.lr_decay);
        for (int s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
            Forward fwd(model.store(), true, &dropper);
            fwd.dropout_rate = cfg.dropout;

            std::vector<Tape::Val> pair_losses;
            double cls_sum = 0.0, reg_sum = 0.0;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto& seq = sequences[static_cast<size_t>(
                    sampler.uniform_int(0, static_cast<int>(sequences.size()) - 1))];
                int last = static_cast<int>(seq.size()) - 1;
                int i = sampler.uniform_int(0, last - 1);
                // Wide temporal offsets: with slow motion, nearby frames put
                // the search target right next to the template box, and the
                // classifier learns that positional shortcut instead of
                // appearance. One-pass tracking then collapses once the
                // target leaves its starting neighborhood.
                int delta = sampler.uniform_int(1, last - i);
                auto parts = model.pair_loss(fwd, seq[static_cast<size_t>(i)],
                                             seq[static_cast<size_t>(i + delta)], jitter,
                                             candidates);
                pair_losses.push_back(parts.total);
                cls_sum += parts.cls;
                reg_sum += parts.reg;
            }
            Tape::Val loss = fwd.tape.average(pair_losses);
            double loss_value = fwd.tape.val(loss).data[0];
            if (!std::isfinite(loss_value)) {
                std::string source = fwd.tape.first_nonfinite();
                throw DomainError("training diverged at step " + std::to_string(step) +
                                  "; first non-finite tensor came from op '" + source + "'");
            }

            fwd.tape.backward(loss);
            GradMap grads = fwd.pull_grads();
            adam.step(model.store(), grads, [&](const std::string& name) {
                return model.is_backbone_param(name) ? lr_backbone : lr_other;
            });
            model.clamp_thresholds();

            result.losses.push_back(loss_value);
            result.cls_losses.push_back(cls_sum / cfg.batch_size);
            result.reg_losses.push_back(reg_sum / cfg.batch_size);
            if (log)
                log << step << " " << loss_value << " " << cls_sum / cfg.batch_size << " "
                    << reg_sum / cfg.batch_size << " " << lr_backbone << " " << lr_other << "\n";
        }
    }
    return result;
}

double smoothed_head(const std::vector<double>& values, int window) {
    if (values.empty()) throw ConfigError("no values to smooth");
    int n = std::min<int>(window, static_cast<int>(values.size()));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += values[static_cast<size_t>(i)];
    return acc / n;
}

double smoothed_tail(const std::vector<double>& values, int window) {
    if (values.empty()) throw ConfigError("no values to smooth");
    int n = std::min<int>(window, static_cast<int>(values.size()));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += values[values.size() - 1 - static_cast<size_t>(i)];
    return acc / n;
}

}  // namespace spikefuse
