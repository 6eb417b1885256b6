// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/rf_engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "amk/error.hpp"

namespace amk {

namespace {

constexpr double kTimeTolerance = 1e-9;

class StepSink final : public AttentionSink {
public:
    StepSink(const Hooks& hooks, SiteContext ctx) : hooks_(hooks), ctx_(ctx) {}

    void on_attention(int layer, FeatureBlock& q, FeatureBlock& k, FeatureBlock& v) override {
        ctx_.layer = layer;
        for (const auto& hook : hooks_) hook(ctx_, q, k, v);
        if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
            throw IntegrationError(detail::concat("non-finite attention features at t=", ctx_.t, " layer ", layer),
                                   ctx_.t, layer);
        }
    }

private:
    const Hooks& hooks_;
    SiteContext ctx_;
};

Latent evaluate(const VelocityBackend& backend, const Latent& z, double t, const Conditioning& cond,
                const Hooks& hooks, const StepInfo& info, int stage) {
    Latent v;
    if (hooks.empty()) {
        v = backend.velocity(z, t, cond, nullptr);
    } else {
        StepSink sink(hooks, SiteContext{info.step, info.interval, 0, stage, t, info.direction});
        v = backend.velocity(z, t, cond, &sink);
    }
    if (v.shape != z.shape)
        throw IntegrationError(detail::concat("backend returned a velocity of the wrong shape at t=", t), t, -1);
    if (!v.all_finite())
        throw IntegrationError(detail::concat("backend returned a non-finite velocity at t=", t), t, -1);
    return v;
}

}  // namespace

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Latent::Latent(std::vector<std::size_t> shape_, float fill) : shape(std::move(shape_)) {
    data.assign(element_count(shape), fill);
}

Latent::Latent(std::vector<std::size_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    AMK_REQUIRE(data.size() == element_count(shape), "Latent: data size ", data.size(),
                " does not match shape element count ", element_count(shape));
}

bool Latent::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float x) { return std::isfinite(x); });
}

Latent interpolate_state(const Latent& x0, const Latent& x1, double t) {
    AMK_REQUIRE(x0.shape == x1.shape, "interpolate_state: latent shapes differ");
    AMK_REQUIRE(t >= 0.0 && t <= 1.0, "interpolate_state: t=", t, " outside [0, 1]");
    Latent out = x0;
    const float a = static_cast<float>(1.0 - t);
    const float b = static_cast<float>(t);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * x1.data[i];
    return out;
}

double relative_error(const Latent& a, const Latent& b) {
    AMK_REQUIRE(a.shape == b.shape, "relative_error: latent shapes differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        num += d * d;
        den += static_cast<double>(b.data[i]) * b.data[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

const char* to_string(FlowDirection d) { return d == FlowDirection::inversion ? "inversion" : "denoising"; }

StepSchedule::StepSchedule(std::vector<double> times, std::string id) : times_(std::move(times)), id_(std::move(id)) {}

StepSchedule StepSchedule::uniform(std::size_t steps) {
    AMK_REQUIRE(steps >= 1, "StepSchedule: need at least one step");
    std::vector<double> times(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) times[i] = static_cast<double>(i) / static_cast<double>(steps);
    return StepSchedule(std::move(times), "uniform-" + std::to_string(steps));
}

StepSchedule StepSchedule::shifted(std::size_t steps, double shift) {
    AMK_REQUIRE(shift > 0.0, "StepSchedule: shift must be positive");
    StepSchedule base = uniform(steps);
    std::vector<double> times = base.times_;
    for (double& t : times) t = shift * t / (1.0 + (shift - 1.0) * t);
    times.front() = 0.0;
    times.back() = 1.0;
    std::ostringstream id;
    id << "shifted-" << steps << "-" << shift;
    return StepSchedule(std::move(times), id.str());
}

StepSchedule StepSchedule::from_times(std::vector<double> times) {
    AMK_REQUIRE(times.size() >= 2, "StepSchedule: need at least two times");
    AMK_REQUIRE(times.front() == 0.0 && times.back() == 1.0, "StepSchedule: endpoints must be exactly 0 and 1");
    for (std::size_t i = 1; i < times.size(); ++i)
        AMK_REQUIRE(times[i] > times[i - 1], "StepSchedule: times must be strictly increasing (index ", i, ")");
    std::ostringstream id;
    id << "custom-" << (times.size() - 1);
    for (double t : times) id << "-" << t;
    return StepSchedule(std::move(times), id.str());
}

TrajectoryState solver_step(const TrajectoryState& state, double dt, const VelocityBackend& backend,
                            const Conditioning& cond, const Hooks& hooks, const StepInfo& info) {
    AMK_REQUIRE(std::abs(dt) > 0.0, "solver_step: dt must be nonzero");
    const double t_next = state.t + dt;
    AMK_REQUIRE(t_next >= -kTimeTolerance && t_next <= 1.0 + kTimeTolerance, "solver_step: t + dt = ", t_next,
                " leaves [0, 1]");
    const double t_end = std::clamp(t_next, 0.0, 1.0);

    const Latent& z = state.latent;
    const Latent v1 = evaluate(backend, z, state.t, cond, hooks, info, 0);

    const float h = static_cast<float>(dt);
    Latent z_pred = z;
    for (std::size_t i = 0; i < z_pred.data.size(); ++i) z_pred.data[i] += h * v1.data[i];

    const Latent v2 = evaluate(backend, z_pred, t_end, cond, hooks, info, 1);

    TrajectoryState next{z, t_end};
    const float half = 0.5f * h;
    for (std::size_t i = 0; i < next.latent.data.size(); ++i)
        next.latent.data[i] += half * (v1.data[i] + v2.data[i]);
    return next;
}

TrajectoryState integrate(const TrajectoryState& start, const StepSchedule& schedule, FlowDirection direction,
                          const VelocityBackend& backend, const Conditioning& cond, const Hooks& hooks) {
    AMK_REQUIRE(std::abs(start.t - schedule.start_time(direction)) <= kTimeTolerance, "integrate: ",
                to_string(direction), " must start at t=", schedule.start_time(direction), ", got t=", start.t);
    const auto& times = schedule.times();
    const std::size_t n = schedule.steps();

    TrajectoryState state = start;
    state.t = schedule.start_time(direction);
    for (std::size_t step = 0; step < n; ++step) {
        const std::size_t interval = schedule.interval_of(step, direction);
        const double t_from = direction == FlowDirection::inversion ? times[interval] : times[interval + 1];
        const double t_to = direction == FlowDirection::inversion ? times[interval + 1] : times[interval];
        state.t = t_from;
        StepInfo info{static_cast<int>(step), static_cast<int>(interval), direction};
        state = solver_step(state, t_to - t_from, backend, cond, hooks, info);
        state.t = t_to;
    }
    return state;
}

}  // namespace amk
