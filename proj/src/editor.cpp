// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/editor.hpp"

#include "amk/array_io.hpp"
#include "amk/error.hpp"
#include "amk/fs_util.hpp"

namespace amk {

void InversionResult::save(const std::filesystem::path& dir) const {
    AMK_REQUIRE(cache != nullptr, "InversionResult: no feature cache");
    std::filesystem::create_directories(dir);
    cache->save(dir / "cache");
    write_array(dir / "noise.bin", noise.shape, noise.data);
}

InversionResult InversionResult::load(const std::filesystem::path& dir) {
    InversionResult r;
    FloatArray arr = read_array(dir / "noise.bin");
    r.noise = Latent(arr.dims, std::move(arr.data));
    r.cache = std::make_shared<FeatureCache>(FeatureCache::load(dir / "cache"));
    return r;
}

InversionResult invert(const VelocityBackend& backend, const Latent& image, const StepSchedule& schedule,
                       const std::string& source_prompt) {
    auto cache = std::make_shared<FeatureCache>(schedule.id(), backend.id());
    HookPair hooks = build_hooks(cache, MixingConfig{});
    Conditioning cond{source_prompt, {}};
    TrajectoryState end =
        integrate(TrajectoryState{image, 0.0}, schedule, FlowDirection::inversion, backend, cond, {hooks.recorder});
    cache->seal();
    return InversionResult{std::move(end.latent), std::move(cache)};
}

Latent edit(const VelocityBackend& backend, const InversionResult& inversion, const StepSchedule& schedule,
            const std::string& target_prompt, const MixingConfig& cfg, std::shared_ptr<AuditLog>* audit) {
    AMK_REQUIRE(inversion.cache != nullptr && inversion.cache->sealed(), "edit: inversion cache is not complete");
    if (cfg.strategy != Strategy::none) {
        AMK_REQUIRE(inversion.cache->schedule_id() == schedule.id(), "edit: inversion was recorded on schedule '",
                    inversion.cache->schedule_id(), "', editing uses '", schedule.id(), "'");
        AMK_REQUIRE(inversion.cache->backend_id() == backend.id(), "edit: inversion was recorded with backend '",
                    inversion.cache->backend_id(), "', editing uses '", backend.id(), "'");
    }
    cfg.validate(schedule.steps(), backend.attention_sites().size());

    HookPair hooks = build_hooks(inversion.cache, cfg);
    if (audit) *audit = hooks.mixer_audit;
    Hooks active;
    if (cfg.strategy != Strategy::none) active.push_back(hooks.mixer);
    Conditioning cond{target_prompt, {}};
    return integrate(TrajectoryState{inversion.noise, 1.0}, schedule, FlowDirection::denoising, backend, cond, active)
        .latent;
}

}  // namespace amk
