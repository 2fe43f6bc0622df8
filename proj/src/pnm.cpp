#include "tab2img/pnm.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "tab2img/errors.hpp"

namespace tab2img::pnm {

using transform::ImageTensor;

void write(const ImageTensor& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3) {
        throw ValidationError("netpbm export supports 1 or 3 channels");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write '" + path + "'");

    out << (img.channels == 1 ? "P5" : "P6") << '\n'
        << img.width << ' ' << img.height << '\n' << "255\n";

    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                row[static_cast<std::size_t>(c) * img.channels + ch] =
                    static_cast<unsigned char>(std::lround(255.0 * img.at(r, c, ch)));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw RuntimeError("error writing '" + path + "'");
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!token.empty()) break;
        } else {
            token.push_back(static_cast<char>(c));
        }
        if (std::isspace(c) && !token.empty()) break;
        c = in.get();
    }
    return token;
}

}  // namespace

ImageTensor read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open image '" + path + "'");

    const std::string magic = next_token(in);
    int channels = 0;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw ValidationError("'" + path + "': unsupported netpbm magic '" + magic + "'");

    const int width = std::stoi(next_token(in));
    const int height = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw ValidationError("'" + path + "': unsupported netpbm header");
    }

    ImageTensor img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.values.resize(static_cast<std::size_t>(width) * height * channels);

    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw ValidationError("'" + path + "': truncated pixel data");
    }

    std::size_t i = 0;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                img.at(r, c, ch) = static_cast<double>(raw[i++]) / 255.0;
            }
        }
    }
    return img;
}

}  // namespace tab2img::pnm
