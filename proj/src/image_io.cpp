#include "movgan/image_io.hpp"

#include <fstream>
#include <vector>

#include "movgan/errors.hpp"

namespace movgan {

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InputError("write_ppm expects a [3, H, W] image, got " + image.shape_string());
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                row[static_cast<size_t>(c) * 3 + ch] = to_byte(image.at(ch, r, c));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw InputError("short write to " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ParseError(path + ": not a binary PPM (P6) file");
    auto skip_comments = [&]() {
        while (in >> std::ws && in.peek() == '#') {
            std::string line;
            std::getline(in, line);
        }
    };
    int w = 0, h = 0, maxval = 0;
    skip_comments();
    in >> w;
    skip_comments();
    in >> h;
    skip_comments();
    in >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval != 255)
        throw ParseError(path + ": unsupported PPM header");
    in.get();  // single whitespace after header
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw ParseError(path + ": truncated pixel data");
    Tensor image({3, h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                image.at(ch, r, c) = from_byte(raw[(static_cast<size_t>(r) * w + c) * 3 + ch]);
    return image;
}

}  // namespace movgan
