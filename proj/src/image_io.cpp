#include "dbd/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace dbd::io {

namespace {
void check_single_channel(const Tensor& t, const char* who) {
    if (t.n() != 1 || t.c() != 1 || t.h() < 1 || t.w() < 1)
        throw std::invalid_argument(std::string(who) + ": expected (1,1,H,W), got " +
                                    t.shape_str());
}
}  // namespace

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
    check_single_channel(map, "write_pfm");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pfm: cannot open " + path.string());
    os << "Pf\n" << map.w() << " " << map.h() << "\n-1.0\n";
    const int H = map.h(), W = map.w();
    std::vector<float> row(static_cast<size_t>(W));
    for (int y = H - 1; y >= 0; --y) {  // bottom-up
        for (int x = 0; x < W; ++x) row[x] = static_cast<float>(map.at(0, 0, y, x));
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(W * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write_pfm: write failed for " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pfm: cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "Pf")
        throw std::runtime_error("read_pfm: " + path.string() +
                                 " is not a single-channel PFM (magic '" + magic + "')");
    int w = 0, h = 0;
    double scale = 0.0;
    is >> w >> h >> scale;
    if (!is || w < 1 || h < 1 || scale == 0.0)
        throw std::runtime_error("read_pfm: malformed header in " + path.string());
    if (scale > 0)
        throw std::runtime_error("read_pfm: big-endian PFM unsupported: " + path.string());
    is.get();  // single whitespace after the scale line

    Tensor out(1, 1, h, w);
    std::vector<float> row(static_cast<size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(w * sizeof(float)));
        if (!is) throw std::runtime_error("read_pfm: truncated data in " + path.string());
        for (int x = 0; x < w; ++x) out.at(0, 0, y, x) = row[x];
    }
    return out;
}

void write_gray8(const std::filesystem::path& path, const Tensor& map) {
    check_single_channel(map, "write_gray8");
    cv::Mat m(map.h(), map.w(), CV_8UC1);
    for (int y = 0; y < map.h(); ++y)
        for (int x = 0; x < map.w(); ++x) {
            const double v = std::clamp(map.at(0, 0, y, x), 0.0, 1.0);
            m.at<uchar>(y, x) = static_cast<uchar>(std::lround(v * 255.0));
        }
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("write_gray8: cannot write " + path.string());
}

Tensor read_gray8(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("read_gray8: cannot read " + path.string());
    Tensor out(1, 1, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) out.at(0, 0, y, x) = m.at<uchar>(y, x) / 255.0;
    return out;
}

void write_rgb8(const std::filesystem::path& path, const Tensor& image) {
    if (image.n() != 1 || image.c() != 3)
        throw std::invalid_argument("write_rgb8: expected (1,3,H,W), got " +
                                    image.shape_str());
    cv::Mat m(image.h(), image.w(), CV_8UC3);
    for (int y = 0; y < image.h(); ++y)
        for (int x = 0; x < image.w(); ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
                px[2 - c] = static_cast<uchar>(std::lround(v * 255.0));  // RGB -> BGR
            }
        }
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("write_rgb8: cannot write " + path.string());
}

Tensor read_rgb8(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("read_rgb8: cannot read " + path.string());
    Tensor out(1, 3, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = px[2 - c] / 255.0;
        }
    return out;
}

Tensor read_mask(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("read_mask: cannot read " + path.string());
    Tensor out(1, 1, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            out.at(0, 0, y, x) = m.at<uchar>(y, x) >= 128 ? 1.0 : 0.0;
    return out;
}

}  // namespace dbd::io
