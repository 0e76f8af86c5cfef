#include "meshfit/validity.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace meshfit;
using namespace meshfit::testing;

TEST_CASE("find_dangling") {
    CHECK(find_dangling(icosphere(1)).empty());

    // Unreferenced vertex appended.
    const TriMesh ico = icosphere(0);
    std::vector<Vec3> v = ico.vertices();
    v.push_back(Vec3(5, 5, 5));
    const TriMesh with_extra = TriMesh::build(v, ico.faces());
    const auto dangling = find_dangling(with_extra);
    REQUIRE(dangling.size() == 1);
    CHECK(dangling[0] == ico.vertex_count());

    // Two tetrahedra sharing a vertex: two fans at the shared vertex.
    std::vector<Vec3> tv = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0},  {0, 0, 1},
                            {-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
    std::vector<Face> tf = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3},
                            {0, 4, 5}, {0, 6, 4}, {0, 5, 6}, {4, 6, 5}};
    const auto pinch = find_dangling(TriMesh::build(tv, tf));
    REQUIRE(pinch.size() == 1);
    CHECK(pinch[0] == 0);
}

TEST_CASE("self intersections: clean sphere") {
    CHECK(find_self_intersections(icosphere(2)).empty());
}

TEST_CASE("self intersections: interpenetrating tetrahedra vs brute force") {
    std::vector<Vec3> v;
    std::vector<Face> f;
    auto add_tet = [&](const Vec3& c, double s, double twist) {
        const int base = static_cast<int>(v.size());
        const Eigen::AngleAxisd rot(twist, Vec3(0, 0, 1));
        for (const Vec3& p : {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)})
            v.push_back(rot * (s * p) + c);
        for (const Face& face : {Face{0, 2, 1}, Face{0, 1, 3}, Face{0, 3, 2}, Face{1, 2, 3}})
            f.push_back({face[0] + base, face[1] + base, face[2] + base});
    };
    add_tet(Vec3(0, 0, 0), 1.0, 0.0);
    add_tet(Vec3(0.4, 0.2, 0.1), 1.0, 0.7);
    const TriMesh m = TriMesh::build(v, f);

    const auto fast = find_self_intersections(m);
    const auto brute = find_self_intersections_brute(m);
    CHECK(fast == brute);
    CHECK(!fast.empty());
    // Every reported pair crosses the two-tetra boundary.
    for (auto& [a, b] : fast) {
        CHECK(a < 4);
        CHECK(b >= 4);
    }
}

TEST_CASE("self intersections: vertex pushed through the opposite wall") {
    const TriMesh base = icosphere(1);
    std::vector<Vec3> v = base.vertices();
    v[3] = -1.8 * v[3];  // pierce the far side
    const TriMesh m = base.with_vertices(std::move(v));
    const auto pairs = find_self_intersections(m);
    CHECK(!pairs.empty());
    // At least one reported pair involves a face incident to the moved vertex.
    bool involves_moved = false;
    for (auto& [a, b] : pairs)
        for (int fi : {a, b})
            for (int idx : m.faces()[fi])
                if (idx == 3) involves_moved = true;
    CHECK(involves_moved);
    CHECK(pairs == find_self_intersections_brute(m));
}

TEST_CASE("accelerated self-intersection equals brute force on random meshes") {
    for (int trial = 0; trial < 25; ++trial) {
        const TriMesh m = bumpy_sphere(1, 0.55, 5000 + trial);
        CHECK(find_self_intersections(m) == find_self_intersections_brute(m));
    }
}

TEST_CASE("reflective edges") {
    const TriMesh flat = TriMesh::build({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}},
                                        {{0, 1, 2}, {0, 2, 3}});
    CHECK(find_reflective_edges(flat, 1.0).empty());
    CHECK(find_reflective_edges(flat, 150.0).empty());

    // Fold two faces to a 10-degree dihedral: deviation 170.
    const double a = 10.0 * M_PI / 180.0;
    const TriMesh folded = TriMesh::build(
        {{0, 0, 0}, {1, 0, 0}, {0.5, 1, 0}, {0.5, std::cos(a), std::sin(a)}},
        {{0, 1, 2}, {1, 0, 3}});
    const auto edges = find_reflective_edges(folded, 150.0);
    REQUIRE(edges.size() == 1);
    CHECK(edges[0].second == doctest::Approx(170.0).epsilon(0.01));

    CHECK(find_reflective_edges(icosphere(3), 150.0).empty());
}

TEST_CASE("deviation fractions") {
    TriMesh ref = icosphere(2);
    std::vector<Vec3> rv = ref.vertices();
    for (Vec3& p : rv) p *= 10.0;
    const TriMesh ref10 = ref.with_vertices(std::move(rv), Units::mm);
    NearestQuery q(ref10);

    SUBCASE("self distance is zero") {
        const DeviationResult d = deviation_fractions(ref10, q);
        CHECK(d.frac_over_t1 == 0.0);
        CHECK(d.frac_over_t2 == 0.0);
    }

    SUBCASE("uniform 4mm deviation splits the thresholds") {
        std::vector<Vec3> mv = icosphere(2).vertices();
        for (Vec3& p : mv) p *= 14.0;
        const TriMesh m14 = icosphere(2).with_vertices(std::move(mv), Units::mm);
        const DeviationResult d = deviation_fractions(m14, q);
        CHECK(d.frac_over_t1 == 1.0);
        CHECK(d.frac_over_t2 == 0.0);
    }

    SUBCASE("normalized mesh without a frame is a units error") {
        const TriMesh norm = icosphere(1);  // icosphere carries normalized units
        CHECK_THROWS(deviation_fractions(norm, q));
    }

    SUBCASE("fractions match a brute-force recomputation and are monotone") {
        const TriMesh m = bumpy_sphere(2, 0.2, 60, 11.0).with_vertices(
            bumpy_sphere(2, 0.2, 60, 11.0).vertices(), Units::mm);
        const DeviationResult d = deviation_fractions(m, q);
        int over1 = 0, over2 = 0;
        for (const Vec3& p : m.vertices()) {
            const double dist = q.point_to_surface_brute(p).distance;
            over1 += dist > 3.2;
            over2 += dist > 6.4;
        }
        CHECK(d.frac_over_t1 == doctest::Approx(double(over1) / m.vertex_count()));
        CHECK(d.frac_over_t2 == doctest::Approx(double(over2) / m.vertex_count()));
        CHECK(d.frac_over_t2 <= d.frac_over_t1);
    }
}

TEST_CASE("audit aggregates all detectors") {
    // Planted-defect trio: a vertex dented past its one-ring plane (inverted
    // faces fold the surface), another pierced through the far wall
    // (intersections), and an unreferenced vertex (dangling).
    const TriMesh base = icosphere(1);
    std::vector<Vec3> v = base.vertices();
    std::vector<Face> f = base.faces();
    v[7] = -1.8 * v[7];  // through the opposite wall
    const int flap = static_cast<int>(v.size());
    const double a = 10.0 * M_PI / 180.0;  // 10-degree dihedral: 170 deviation
    v.push_back(Vec3(4, 0, 0));
    v.push_back(Vec3(5, 0, 0));
    v.push_back(Vec3(4.5, 1, 0));
    v.push_back(Vec3(4.5, std::cos(a), std::sin(a)));
    f.push_back({flap, flap + 1, flap + 2});
    f.push_back({flap + 1, flap, flap + 3});
    v.push_back(Vec3(9, 9, 9));  // dangling
    const TriMesh planted = TriMesh::build(v, f);

    const ValidityReport r = audit(planted);
    CHECK(!r.dangling_nodes.empty());
    CHECK(!r.self_intersections.empty());
    CHECK(!r.reflective_edges.empty());
    // Sphere (2) + open flap (1) + isolated vertex (1).
    CHECK(r.euler_characteristic == 4);

    const ValidityReport again = audit(planted);
    CHECK(r.to_text() == again.to_text());
}

TEST_CASE("audit of a clean fitted-style mesh") {
    const TriMesh m = bumpy_sphere(2, 0.1, 61);
    const ValidityReport r = audit(m);
    CHECK(r.dangling_nodes.empty());
    CHECK(r.self_intersections.empty());
    CHECK(r.watertight);
    CHECK(r.manifold);
    CHECK(r.euler_characteristic == 2);
}
