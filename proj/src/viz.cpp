#include "das/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "das/tensor_io.hpp"

namespace das::viz {

namespace {

std::string next_token(std::istream& is) {
    std::string tok;
    char c;
    while (is.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(is, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok += c;
    }
    return tok;
}

std::size_t header_number(std::istream& is, const std::string& path) {
    const std::string tok = next_token(is);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9)
        throw FormatError(path + ": bad PNM header");
    return std::stoul(tok);
}

}  // namespace

Image read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open image '" + path + "'");
    Image img;
    const std::string magic = next_token(is);
    if (magic == "P6") img.channels = 3;
    else if (magic == "P5") img.channels = 1;
    else throw FormatError(path + ": not a binary PGM/PPM file");
    img.width = header_number(is, path);
    img.height = header_number(is, path);
    if (header_number(is, path) != 255) throw FormatError(path + ": only maxval 255 is supported");
    if (img.width == 0 || img.height == 0) throw FormatError(path + ": empty image");
    img.pixels.resize(img.width * img.height * img.channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw FormatError(path + ": truncated pixel data");
    return img;
}

void write_pnm(const std::string& path, const Image& image) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write image '" + path + "'");
    os << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Tensor image_to_tensor(const Image& image) {
    const std::size_t H = image.height, W = image.width;
    std::vector<double> v(3 * H * W);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
            const std::size_t src = image.channels == 3 ? i * 3 + c : i;
            v[c * H * W + i] = 4.0 * image.pixels[src] / 255.0 - 2.0;
        }
    return Tensor({3, H, W}, std::move(v));
}

Image tensor_to_image(const Tensor& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("tensor_to_image: expected 3 x H x W");
    Image img{chw.dim(2), chw.dim(1), 3, {}};
    const std::size_t n = img.width * img.height;
    img.pixels.resize(n * 3);
    auto d = chw.data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            const double b = std::round((d[c * n + i] + 2.0) / 4.0 * 255.0);
            img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
        }
    return img;
}

std::pair<std::size_t, std::size_t> nearest_patch(double x, double y, std::size_t width, std::size_t height) {
    auto snap = [](double v, std::size_t extent) {
        const double r = std::floor(v + 0.5);
        return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(extent - 1)));
    };
    return {snap(x, width), snap(y, height)};
}

ScanPath scan_path(const scan::DasResult* das, std::size_t H, std::size_t W) {
    ScanPath path{W, H, {}};
    const bool live = das && das->coords.defined();
    auto to_pixel = [](double c, std::size_t extent) {
        return extent > 1 ? (c + 1.0) / 2.0 * static_cast<double>(extent - 1) : 0.0;
    };
    for (std::size_t i = 0; i < H * W; ++i) {
        PathPoint p;
        if (live) {
            if (das->coords.numel() < H * W * 2) throw ShapeError("scan_path: coordinate grid smaller than H x W");
            p.x = to_pixel(das->coords.data()[2 * i], W);
            p.y = to_pixel(das->coords.data()[2 * i + 1], H);
            const double rx = das->raw_coords.data()[2 * i], ry = das->raw_coords.data()[2 * i + 1];
            p.out_of_grid = std::abs(rx) > 1.0 || std::abs(ry) > 1.0;
        } else {
            p.x = static_cast<double>(i % W);
            p.y = static_cast<double>(i / W);
        }
        std::tie(p.patch_x, p.patch_y) = nearest_patch(p.x, p.y, W, H);
        path.points.push_back(p);
    }
    return path;
}

ScanPath model_scan_path(const model::Model& m, const Tensor& image, std::size_t stage) {
    if (stage >= 4) throw ConfigError("stage must be 1..4");
    NoGradGuard guard;
    model::ForwardTrace trace;
    model::ForwardOptions opt;
    opt.trace = &trace;
    model::backbone_forward(m, image, opt);
    const model::BlockTrace* last = nullptr;
    for (const auto& b : trace.blocks)
        if (b.stage == stage) last = &b;
    if (!last) throw ContractError("model_scan_path: stage has no blocks");
    // Blocks see the grid after this stage's downsampling, which is what the stage output records.
    const Shape& s = trace.stage_shapes.at(stage);
    return scan_path(&last->das, s[1], s[2]);
}

void write_svg(std::ostream& os, const Image& image, const ScanPath& path) {
    const double scale = std::max(1.0, std::floor(512.0 / static_cast<double>(std::max(image.width, image.height))));
    const double W = static_cast<double>(image.width) * scale, H = static_cast<double>(image.height) * scale;
    const double cw = W / static_cast<double>(path.grid_width), ch = H / static_cast<double>(path.grid_height);
    auto cx = [&](std::size_t px) { return (static_cast<double>(px) + 0.5) * cw; };
    auto cy = [&](std::size_t py) { return (static_cast<double>(py) + 0.5) * ch; };
    char buf[256];
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W, H,
                  W, H);
    os << buf;

    os << "<g id=\"image\" shape-rendering=\"crispEdges\">\n";
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width;) {
            // merge horizontal runs of one colour
            auto colour = [&](std::size_t xx) {
                const std::uint8_t* p = &image.pixels[(y * image.width + xx) * image.channels];
                return image.channels == 3 ? (p[0] << 16 | p[1] << 8 | p[2]) : (p[0] << 16 | p[0] << 8 | p[0]);
            };
            const int c = colour(x);
            std::size_t run = 1;
            while (x + run < image.width && colour(x + run) == c) ++run;
            std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"#%06x\"/>\n",
                          static_cast<double>(x) * scale, static_cast<double>(y) * scale,
                          static_cast<double>(run) * scale, scale, c);
            os << buf;
            x += run;
        }
    os << "</g>\n<g id=\"grid\" stroke=\"#ffffff\" stroke-opacity=\"0.35\" stroke-width=\"1\">\n";
    for (std::size_t i = 1; i < path.grid_width; ++i) {
        std::snprintf(buf, sizeof buf, "<line class=\"grid\" x1=\"%g\" y1=\"0\" x2=\"%g\" y2=\"%g\"/>\n",
                      static_cast<double>(i) * cw, static_cast<double>(i) * cw, H);
        os << buf;
    }
    for (std::size_t i = 1; i < path.grid_height; ++i) {
        std::snprintf(buf, sizeof buf, "<line class=\"grid\" x1=\"0\" y1=\"%g\" x2=\"%g\" y2=\"%g\"/>\n",
                      static_cast<double>(i) * ch, W, static_cast<double>(i) * ch);
        os << buf;
    }
    os << "</g>\n<g id=\"path\" stroke=\"#ffd400\" stroke-width=\"2\" fill=\"none\">\n";
    for (std::size_t i = 1; i < path.points.size(); ++i) {
        const auto& a = path.points[i - 1];
        const auto& b = path.points[i];
        std::snprintf(buf, sizeof buf, "<line class=\"seg\" x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\"/>\n",
                      cx(a.patch_x), cy(a.patch_y), cx(b.patch_x), cy(b.patch_y));
        os << buf;
    }
    os << "</g>\n<g id=\"points\">\n";
    const double r = std::max(2.0, std::min(cw, ch) * 0.12);
    for (std::size_t i = 0; i < path.points.size(); ++i) {
        const auto& p = path.points[i];
        std::snprintf(buf, sizeof buf,
                      "<circle class=\"%s\" cx=\"%g\" cy=\"%g\" r=\"%g\" fill=\"%s\" data-slot=\"%zu\" "
                      "data-px=\"%.4f\" data-py=\"%.4f\"/>\n",
                      p.out_of_grid ? "pt oob" : "pt", cx(p.patch_x), cy(p.patch_y), r,
                      p.out_of_grid ? "#9a9a9a" : "#ff3b30", i, p.x, p.y);
        os << buf;
    }
    os << "</g>\n";
    if (!path.points.empty()) {
        const auto& s = path.points.front();
        const double sx = cx(s.patch_x), sy = cy(s.patch_y), R = r * 3.0;
        os << "<polygon class=\"start\" fill=\"#1e64ff\" stroke=\"#ffffff\" points=\"";
        for (int k = 0; k < 10; ++k) {
            const double ang = -M_PI / 2.0 + k * M_PI / 5.0, rad = k % 2 ? R * 0.4 : R;
            std::snprintf(buf, sizeof buf, "%s%.3f,%.3f", k ? " " : "", sx + rad * std::cos(ang), sy + rad * std::sin(ang));
            os << buf;
        }
        os << "\"/>\n";
        const auto& e = path.points.back();
        std::snprintf(buf, sizeof buf,
                      "<circle class=\"end\" cx=\"%g\" cy=\"%g\" r=\"%g\" fill=\"none\" stroke=\"#1e64ff\" "
                      "stroke-width=\"3\"/>\n",
                      cx(e.patch_x), cy(e.patch_y), r * 2.5);
        os << buf;
    }
    os << "</svg>\n";
}

}  // namespace das::viz
