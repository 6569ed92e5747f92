// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "lodgs/errors.hpp"

namespace lodgs {

/// Row-major interleaved image, `channels` values per pixel.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels = 3, T fill = T(0))
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill)
    {
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
    const T& operator()(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Image& o) const
    {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    template <typename U> Image<U> cast() const
    {
        Image<U> out(width_, height_, channels_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Image&) const = default;

private:
    std::size_t index(int x, int y, int c) const
    {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Image<T>& a, const Image<T>& b)
{
    if (!a.same_shape(b))
        throw ShapeMismatch("image shapes differ");
}

/// Averages factor x factor blocks. Dimensions must be divisible by factor.
template <typename T>
Image<T> box_downsample(const Image<T>& src, int factor)
{
    if (factor == 1)
        return src;
    if (factor < 1 || src.width() % factor != 0 || src.height() % factor != 0)
        throw ShapeMismatch("image size is not divisible by the downsampling factor");
    Image<T> out(src.width() / factor, src.height() / factor, src.channels());
    const T inv = T(1) / T(factor * factor);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < src.channels(); ++c) {
                T sum = T(0);
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        sum += src(x * factor + dx, y * factor + dy, c);
                out(x, y, c) = sum * inv;
            }
    return out;
}

}  // namespace lodgs
