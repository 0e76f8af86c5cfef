#include "meshfit/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace meshfit;
using namespace meshfit::testing;

TEST_CASE("point_to_surface basics") {
    const TriMesh ico = icosphere(2);
    NearestQuery q(ico);

    // On a vertex of the target.
    const auto r0 = q.point_to_surface(ico.vertices()[5]);
    CHECK(r0.distance == doctest::Approx(0.0));

    const TriMesh tri = TriMesh::build({{-1, -1, 0}, {1, -1, 0}, {0, 1, 0}}, {{0, 1, 2}});
    NearestQuery tq(tri);
    const auto r1 = tq.point_to_surface(Vec3(0, 0, 2));
    CHECK(r1.distance == doctest::Approx(2.0));
    CHECK((r1.closest - Vec3(0, 0, 0)).norm() == doctest::Approx(0.0));
}

TEST_CASE("accelerated nearest equals brute force") {
    Rng rng(21);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    const TriMesh ico = bumpy_sphere(2, 0.2, 5);
    NearestQuery q(ico);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p(uni(rng), uni(rng), uni(rng));
        const auto fast = q.point_to_surface(p);
        const auto brute = q.point_to_surface_brute(p);
        CHECK(fast.distance == brute.distance);
        // Equal-distance ties may resolve to a different face; the returned
        // point must still realize the same distance.
        CHECK(std::abs((p - fast.closest).norm() - brute.distance) < 1e-12);
    }
}

TEST_CASE("assd of identical meshes is zero") {
    const TriMesh m = bumpy_sphere(1, 0.2, 30);
    CHECK(assd(m, m) == doctest::Approx(0.0));
    CHECK(hausdorff(m, m) == doctest::Approx(0.0));
}

TEST_CASE("assd of parallel unit squares equals their gap") {
    auto square = [](double z) {
        return TriMesh::build({{0, 0, z}, {1, 0, z}, {1, 1, z}, {0, 1, z}},
                              {{0, 1, 2}, {0, 2, 3}}, Units::mm);
    };
    const double d = 0.37;
    const SurfaceDistance sd = surface_distance_mesh(square(0.0), square(d));
    CHECK(std::abs(sd.assd - d) / d < 0.01);
    CHECK(std::abs(sd.hausdorff - d) / d < 0.01);
}

TEST_CASE("assd matches a brute-force re-implementation") {
    const TriMesh p = bumpy_sphere(1, 0.25, 31);
    const TriMesh q = bumpy_sphere(1, 0.25, 32);
    SampleConfig cfg;
    const SurfaceDistance sd = surface_distance_mesh(p, q, cfg);

    // Same sample sets, brute-force nearest on every query.
    const std::vector<Vec3> sp = sample_surface(p, cfg);
    const std::vector<Vec3> sq = sample_surface(q, cfg);
    NearestQuery pq(p), qq(q);
    double sum = 0.0;
    for (const Vec3& x : sp) sum += qq.point_to_surface_brute(x).distance;
    for (const Vec3& x : sq) sum += pq.point_to_surface_brute(x).distance;
    const double brute = sum / static_cast<double>(sp.size() + sq.size());
    CHECK(std::abs(sd.assd - brute) < 1e-6);
}

TEST_CASE("hausdorff sees a planted deviation") {
    const TriMesh base = icosphere(2);
    std::vector<Vec3> v = base.vertices();
    v[17] *= 1.3;  // push one vertex out by 0.3
    const TriMesh moved = base.with_vertices(std::move(v));
    const double hd = hausdorff(moved, base);
    CHECK(hd == doctest::Approx(0.3).epsilon(0.1));
    CHECK(hausdorff(moved, base) == hausdorff(base, moved));
}

TEST_CASE("outer-mode distance uses mask boundary points") {
    const Volume mask = sphere_mask(32, 10.0);
    const std::vector<Vec3> boundary = boundary_voxel_centers(mask);
    CHECK(!boundary.empty());
    for (const Vec3& b : boundary) {
        const double r = (b - Vec3(15.5, 15.5, 15.5)).norm();
        CHECK(r > 8.0);
        CHECK(r < 10.5);
    }

    TriMesh ico = icosphere(3);
    std::vector<Vec3> v = ico.vertices();
    for (Vec3& p : v) p = p * 9.5 + Vec3(15.5, 15.5, 15.5);
    const TriMesh sphere = ico.with_vertices(std::move(v), Units::mm);
    const SurfaceDistance sd = surface_distance_outer(sphere, mask);
    CHECK(sd.assd < 1.2);  // sphere surface close to the shell of boundary voxels
    CHECK(sd.hausdorff < 2.5);
}

TEST_CASE("dice and jaccard") {
    Volume a = Volume::zeros({10, 10, 10}, VolumeKind::mask);
    Volume b = Volume::zeros({10, 10, 10}, VolumeKind::mask);

    SUBCASE("identical masks") {
        for (int i = 0; i < 10; ++i) a.at(i, 0, 0) = b.at(i, 0, 0) = 1.0;
        const Overlap o = dice_jaccard(a, b);
        CHECK(o.dice == 1.0);
        CHECK(o.jaccard == 1.0);
    }
    SUBCASE("disjoint masks") {
        a.at(0, 0, 0) = 1.0;
        b.at(5, 5, 5) = 1.0;
        const Overlap o = dice_jaccard(a, b);
        CHECK(o.dice == 0.0);
        CHECK(o.jaccard == 0.0);
    }
    SUBCASE("half overlap") {
        // |a| = |b| = 100 with 50 shared.
        for (int i = 0; i < 100; ++i) a.data[i] = 1.0;
        for (int i = 50; i < 150; ++i) b.data[i] = 1.0;
        const Overlap o = dice_jaccard(a, b);
        CHECK(o.dice == doctest::Approx(0.5));
        CHECK(o.jaccard == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("both empty count as perfect agreement") {
        const Overlap o = dice_jaccard(a, b);
        CHECK(o.dice == 1.0);
        CHECK(o.jaccard == 1.0);
    }
    SUBCASE("dims mismatch is an error") {
        const Volume small = Volume::zeros({4, 4, 4}, VolumeKind::mask);
        CHECK_THROWS(dice_jaccard(a, small));
    }
}

TEST_CASE("dice equals 2j/(1+j) on random mask pairs") {
    Rng rng(40);
    std::uniform_real_distribution<double> uni(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        Volume a = Volume::zeros({8, 8, 8}, VolumeKind::mask);
        Volume b = Volume::zeros({8, 8, 8}, VolumeKind::mask);
        const double pa = uni(rng), pb = uni(rng);
        long na = 0, nb = 0, inter = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = uni(rng) < pa ? 1.0 : 0.0;
            b.data[i] = uni(rng) < pb ? 1.0 : 0.0;
            na += a.data[i] != 0.0;
            nb += b.data[i] != 0.0;
            inter += a.data[i] != 0.0 && b.data[i] != 0.0;
        }
        const Overlap o = dice_jaccard(a, b);
        // The identity reduces to (union + intersection) == |a| + |b|, which
        // is exact in integers; the floating forms agree to roundoff.
        const long uni_count = na + nb - inter;
        CHECK(uni_count + inter == na + nb);
        if (na + nb > 0)
            CHECK(2.0 * o.jaccard / (1.0 + o.jaccard) == doctest::Approx(o.dice).epsilon(1e-12));
    }
}

TEST_CASE("p2sd is the mean vertex-to-surface distance") {
    const TriMesh ref = icosphere(2);
    TriMesh m = icosphere(1);
    std::vector<Vec3> v = m.vertices();
    for (Vec3& p : v) p *= 1.1;
    const TriMesh moved = m.with_vertices(std::move(v));
    NearestQuery q(ref);
    double hand = 0.0;
    for (const Vec3& p : moved.vertices()) hand += q.point_to_surface_brute(p).distance;
    hand /= moved.vertex_count();
    CHECK(p2sd(moved, q) == doctest::Approx(hand).epsilon(1e-12));
}
