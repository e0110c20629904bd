#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pbev/geometry.hpp"
#include "pbev/heads.hpp"
#include "pbev/tensor.hpp"

namespace pbev::synth {

enum ObstacleClass { kVehicle = 0, kTruck = 1, kPerson = 2, kBikeRider = 3 };
inline constexpr int kObstacleClasses = 4;
const char* obstacle_class_name(int cls);
// Vehicle/Truck map to the freespace Vehicle class, Person/BikeRider to VRU.
int freespace_class_of(int obstacle_cls);

struct SceneConfig {
    int min_obstacles = 1, max_obstacles = 5;
    int active_classes = kObstacleClasses;  // use the first n classes only
    std::array<double, kObstacleClasses> class_mix{1.0, 0.6, 0.6, 0.6};
    double min_distance = 2.5, max_distance = 11.0;
    double base_elevation_lo = 0.0, base_elevation_hi = 0.0;
    int min_parking = 0, max_parking = 3;
    double road_radius_lo = 0.55, road_radius_hi = 0.92;  // fraction of extent
    double extent = 16.0;                                 // scene radius, meters
};

struct Scene {
    long id = 0;
    uint64_t seed = 0;
    std::string rig_id;
    std::vector<heads::GtObstacle> obstacles;
    heads::FreespacePolygon freespace;
    std::vector<heads::ParkingSpace> parking;
};

// Built-in rigs: "car2" and "truck2" (fisheye front/rear pairs with
// deliberately different mounting), "car8" (desk-scale eight-camera ring).
geom::CameraRig rig_preset(const std::string& name);

Scene generate_scene(const SceneConfig& cfg, long id, uint64_t seed);

struct RenderedView {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // 3*H*W, channel-major
};

std::vector<RenderedView> render_views(const Scene& scene, const geom::CameraRig& rig);
Tensor view_to_tensor(const RenderedView& v);
uint64_t view_hash(const RenderedView& v);

struct Dataset {
    std::string rig_id;
    uint64_t base_seed = 0;
    int count = 0;
    SceneConfig config;
    std::vector<Scene> scenes;
};

Dataset generate_dataset(const SceneConfig& cfg, const std::string& rig_id, int count,
                         uint64_t base_seed);
// Line-delimited text: a header record then one record per scene. Images are
// regenerated from seeds, never stored.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace pbev::synth
