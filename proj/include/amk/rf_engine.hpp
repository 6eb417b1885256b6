// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Rectified-flow ODE integration, dZ/dt = v(Z, t), over an abstract velocity
// backend. t = 0 is the data end, t = 1 the noise end. Inversion integrates
// 0 -> 1, denoising 1 -> 0, both with a second-order Heun step.

#pragma once

#include <any>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "amk/attention_math.hpp"

namespace amk {

/// Dense float tensor with a backend-defined shape.
struct Latent {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Latent() = default;
    explicit Latent(std::vector<std::size_t> shape_, float fill = 0.0f);
    Latent(std::vector<std::size_t> shape_, std::vector<float> data_);

    std::size_t size() const { return data.size(); }
    bool all_finite() const;

    friend bool operator==(const Latent&, const Latent&) = default;
};

std::size_t element_count(const std::vector<std::size_t>& shape);

/// (1 - t) * x0 + t * x1.
Latent interpolate_state(const Latent& x0, const Latent& x1, double t);

/// ||a - b|| / ||b||, accumulated in double.
double relative_error(const Latent& a, const Latent& b);

enum class FlowDirection { inversion, denoising };

const char* to_string(FlowDirection d);

/// Time grid 0 = t_0 < t_1 < ... < t_N = 1. Inversion walks it forward,
/// denoising backward; interval i is [t_i, t_{i+1}] in both directions.
class StepSchedule {
public:
    static StepSchedule uniform(std::size_t steps);
    /// Resolution-shifted grid t' = s*t / (1 + (s-1)*t), as used by large flow backbones.
    static StepSchedule shifted(std::size_t steps, double shift);
    /// Throws ContractError unless times run strictly from 0 to 1.
    static StepSchedule from_times(std::vector<double> times);

    std::size_t steps() const { return times_.size() - 1; }
    const std::vector<double>& times() const { return times_; }
    const std::string& id() const { return id_; }

    double start_time(FlowDirection d) const { return d == FlowDirection::inversion ? 0.0 : 1.0; }
    double end_time(FlowDirection d) const { return d == FlowDirection::inversion ? 1.0 : 0.0; }

    /// Grid interval traversed at the given emission step.
    std::size_t interval_of(std::size_t step, FlowDirection d) const {
        return d == FlowDirection::inversion ? step : steps() - 1 - step;
    }

private:
    StepSchedule(std::vector<double> times, std::string id);

    std::vector<double> times_;
    std::string id_;
};

struct TrajectoryState {
    Latent latent;
    double t = 0.0;
};

/// Prompt plus an optional backend-specific payload (e.g. precomputed text embeddings).
struct Conditioning {
    std::string prompt_text;
    std::any extra;
};

/// Where an attention hook is being called from.
struct SiteContext {
    int step = 0;      ///< emission order within the integration, 0..N-1
    int interval = 0;  ///< grid interval; inversion and denoising share it
    int layer = 0;
    int stage = 0;     ///< 0 = predictor evaluation, 1 = corrector evaluation
    double t = 0.0;    ///< time of this velocity evaluation
    FlowDirection direction = FlowDirection::denoising;

    SiteKey site() const { return SiteKey{interval, layer}; }
};

/// Called on every attention block evaluation. May rewrite q, k and v in place.
using AttentionHook = std::function<void(const SiteContext&, FeatureBlock& q, FeatureBlock& k, FeatureBlock& v)>;
using Hooks = std::vector<AttentionHook>;

/// Receiver the backend calls once per attention block per velocity evaluation.
class AttentionSink {
public:
    virtual ~AttentionSink() = default;
    virtual void on_attention(int layer, FeatureBlock& q, FeatureBlock& k, FeatureBlock& v) = 0;
};

struct AttentionSite {
    int layer = 0;
    TokenLayout layout;
};

class VelocityBackend {
public:
    virtual ~VelocityBackend() = default;

    virtual std::string id() const = 0;
    virtual std::vector<std::size_t> latent_shape() const = 0;
    virtual std::vector<AttentionSite> attention_sites() const = 0;

    /// v(z, t | conditioning). Must call sink->on_attention for every attention
    /// block, in layer order, when sink is non-null.
    virtual Latent velocity(const Latent& z, double t, const Conditioning& cond, AttentionSink* sink) const = 0;
};

struct StepInfo {
    int step = 0;
    int interval = 0;
    FlowDirection direction = FlowDirection::denoising;
};

/// One Heun step: z_pred = z + dt*v(z,t); z' = z + dt/2 * (v(z,t) + v(z_pred,t+dt)).
/// Hooks run on both evaluations (stage 0 and 1). Throws IntegrationError on
/// non-finite velocities or attention features; hook exceptions propagate.
TrajectoryState solver_step(const TrajectoryState& state, double dt, const VelocityBackend& backend,
                            const Conditioning& cond, const Hooks& hooks = {}, const StepInfo& info = {});

/// Runs solver_step over every interval of the schedule in the given direction.
TrajectoryState integrate(const TrajectoryState& start, const StepSchedule& schedule, FlowDirection direction,
                          const VelocityBackend& backend, const Conditioning& cond, const Hooks& hooks = {});

}  // namespace amk
