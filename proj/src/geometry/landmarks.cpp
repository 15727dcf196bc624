#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "aasn/geometry.hpp"

namespace aasn::geometry {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

const std::array<LandmarkInfo, kLandmarkCount>& landmark_schema() {
    // l_ = left half of the image, r_ = right half.
    static const std::array<LandmarkInfo, kLandmarkCount> schema{{
        {"l_iliac_wing_upper", 1, false},
        {"r_iliac_wing_upper", 0, false},
        {"l_iliac_wing_lower", 3, false},
        {"r_iliac_wing_lower", 2, false},
        {"l_sup_ramus_lateral", 5, true},
        {"r_sup_ramus_lateral", 4, true},
        {"l_sup_ramus_medial", 7, true},
        {"r_sup_ramus_medial", 6, true},
        {"l_inf_ramus_medial", 9, true},
        {"r_inf_ramus_medial", 8, true},
        {"l_ischial_tuberosity", 11, true},
        {"r_ischial_tuberosity", 10, true},
        {"l_ischial_body", 13, true},
        {"r_ischial_body", 12, true},
        {"symphysis_superior", 14, true},
        {"symphysis_inferior", 15, true},
    }};
    return schema;
}

int landmark_index(std::string_view name) {
    const auto& schema = landmark_schema();
    for (int i = 0; i < kLandmarkCount; ++i) {
        if (schema[static_cast<std::size_t>(i)].name == name) return i;
    }
    throw SchemaError("unknown landmark name '" + std::string(name) + "'");
}

std::array<Point, kPairCount + 2> LandmarkSet::axis_points() const {
    std::array<Point, kPairCount + 2> out{};
    for (int i = 0; i < kPairCount; ++i) {
        out[static_cast<std::size_t>(i)] = 0.5 * ((*this)[left(i)] + (*this)[right(i)]);
    }
    out[kPairCount] = (*this)[kSymphysisSuperior];
    out[kPairCount + 1] = (*this)[kSymphysisInferior];
    return out;
}

void LandmarkSet::validate(int width, int height) const {
    const auto& schema = landmark_schema();
    for (int i = 0; i < kLandmarkCount; ++i) {
        const Point p = (*this)[i];
        const std::string name(schema[static_cast<std::size_t>(i)].name);
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw GeometryError("landmark " + name + " has a non-finite coordinate");
        }
        if (p.x < 0 || p.y < 0 || p.x > width - 1 || p.y > height - 1) {
            std::ostringstream msg;
            msg << "landmark " << name << " at (" << p.x << ", " << p.y << ") lies outside the " << width << "x"
                << height << " image";
            throw GeometryError(msg.str());
        }
    }
}

LandmarkSet parse_landmarks(std::istream& in) {
    std::array<bool, kLandmarkCount> seen{};
    LandmarkSet lm;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string name;
        if (!(fields >> name)) continue;
        double x = 0;
        double y = 0;
        std::string extra;
        if (!(fields >> x >> y) || (fields >> extra)) {
            throw SchemaError("landmark file line " + std::to_string(line_no) + ": expected 'name x y'");
        }
        int idx = 0;
        try {
            idx = landmark_index(name);
        } catch (const SchemaError&) {
            throw SchemaError("landmark file line " + std::to_string(line_no) + ": unknown landmark '" + name + "'");
        }
        if (seen[static_cast<std::size_t>(idx)]) {
            throw SchemaError("landmark file line " + std::to_string(line_no) + ": duplicate landmark '" + name + "'");
        }
        seen[static_cast<std::size_t>(idx)] = true;
        lm[idx] = {x, y};
    }
    std::string missing;
    for (int i = 0; i < kLandmarkCount; ++i) {
        if (!seen[static_cast<std::size_t>(i)]) {
            if (!missing.empty()) missing += ", ";
            missing += landmark_schema()[static_cast<std::size_t>(i)].name;
        }
    }
    if (!missing.empty()) throw SchemaError("landmark file is missing: " + missing);
    return lm;
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open landmark file " + path.string());
    return parse_landmarks(in);
}

void write_landmarks(std::ostream& out, const LandmarkSet& lm) {
    out << std::setprecision(17);
    for (int i = 0; i < kLandmarkCount; ++i) {
        out << landmark_schema()[static_cast<std::size_t>(i)].name << ' ' << lm[i].x << ' ' << lm[i].y << '\n';
    }
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_landmarks(out, lm);
}

} // namespace aasn::geometry
