#include <cmath>

#include "efd/sim/types.hpp"

namespace efd {

namespace {

struct Window {
    double x_min, x_max;  // ego-frame forward extents
    double y_half;        // lateral half extent
};

// Cell centers are laid out in the ego frame (row 0 = far ahead, col 0 =
// left) and transformed to world coordinates per query, so jointly shifting
// ego and world leaves the raster untouched.
void render_window(const World& w, const Window& win, std::vector<float>& out) {
    const SimConfig& c = w.cfg;
    const int N = c.raster_cells;
    out.assign(static_cast<size_t>(3 * N * N), 0.0f);
    const double ch = std::cos(w.ego.heading), sh = std::sin(w.ego.heading);
    const double dx = (win.x_max - win.x_min) / N;
    const double dy = (2.0 * win.y_half) / N;

    // Prefilter route segments to the window's bounding circle.
    const double span_x = std::max(std::abs(win.x_min), std::abs(win.x_max));
    const double reach = std::sqrt(span_x * span_x + win.y_half * win.y_half) +
                         c.corridor_halfwidth + 1.0;
    const auto& verts = w.route.vertices;
    std::vector<size_t> segs;
    for (size_t i = 1; i < verts.size(); ++i) {
        const double seg_len = (verts[i].p - verts[i - 1].p).norm();
        const Vec2 mid = (verts[i].p + verts[i - 1].p) * 0.5;
        if ((mid - w.ego.pos).norm() <= reach + seg_len * 0.5) segs.push_back(i);
    }

    struct Line {
        Vec2 a, b;
        float value;
    };
    std::vector<Line> lines;
    for (size_t i = 0; i < w.route.lights.size(); ++i) {
        const auto [a, b] = w.route.stop_line_at(w.route.lights[i].route_s, c.corridor_halfwidth);
        const LightPhase ph = w.light_phase(i);
        const float v = ph == LightPhase::Red ? 1.0f : ph == LightPhase::Yellow ? 0.6f : 0.3f;
        lines.push_back({a, b, v});
    }
    for (const auto& s : w.route.stop_signs) {
        const auto [a, b] = w.route.stop_line_at(s.route_s, c.corridor_halfwidth);
        lines.push_back({a, b, 0.8f});
    }

    for (int i = 0; i < N; ++i) {
        const double ex = win.x_max - (i + 0.5) * dx;
        for (int j = 0; j < N; ++j) {
            const double ey = win.y_half - (j + 0.5) * dy;
            const Vec2 p{w.ego.pos.x + ch * ex - sh * ey, w.ego.pos.y + sh * ex + ch * ey};
            const size_t cell = static_cast<size_t>(i * N + j);

            double d_route = 1e300;
            for (size_t si : segs) {
                const double d = dist_point_segment(p, verts[si - 1].p, verts[si].p);
                if (d < d_route) d_route = d;
            }
            if (d_route <= c.corridor_halfwidth) out[cell] = 1.0f;

            float actor_v = 0.0f;
            for (size_t ai = 0; ai < w.actors.size(); ++ai) {
                if (!w.actors[ai].active) continue;
                const ActorSpec& spec = w.route.actors[ai];
                if ((p - w.actors[ai].pos).norm() <= spec.radius) {
                    const float v = spec.kind == ActorKind::Pedestrian ? 0.6f
                                    : spec.kind == ActorKind::Static  ? 0.8f
                                                                      : 1.0f;
                    actor_v = std::max(actor_v, v);
                }
            }
            if (actor_v > 0) out[static_cast<size_t>(N * N) + cell] = actor_v;

            float line_v = 0.0f;
            for (const auto& ln : lines)
                if (dist_point_segment(p, ln.a, ln.b) <= 0.6) line_v = std::max(line_v, ln.value);
            if (line_v > 0) out[static_cast<size_t>(2 * N * N) + cell] = line_v;
        }
    }
}

}  // namespace

void render_views(const World& w, std::vector<float>& main_out, std::vector<float>& side_out) {
    const SimConfig& c = w.cfg;
    // Main: forward square. Side: wide lateral strip, one third behind ego.
    render_window(w, {0.0, c.main_forward, c.main_width / 2.0}, main_out);
    render_window(w, {-c.side_depth / 3.0, 2.0 * c.side_depth / 3.0, c.side_width / 2.0},
                  side_out);
}

Observation observe(const World& w) {
    Observation o;
    o.raster_cells = w.cfg.raster_cells;
    render_views(w, o.main, o.side);
    o.speed = w.ego.speed;
    o.command = w.route.command_at(w.progress_s);
    const Vec2 tgt_world = w.route.point_at(w.progress_s + w.cfg.target_lookahead);
    const double ch = std::cos(w.ego.heading), sh = std::sin(w.ego.heading);
    const Vec2 d = tgt_world - w.ego.pos;
    Vec2 tgt{ch * d.x + sh * d.y, -sh * d.x + ch * d.y};
    // Keep the target inside the lookahead bound even when ego strays.
    const double bound = 2.0 * w.cfg.target_lookahead;
    const double n = tgt.norm();
    if (n > bound) tgt = tgt * (bound / n);
    o.target = tgt;
    return o;
}

}  // namespace efd
