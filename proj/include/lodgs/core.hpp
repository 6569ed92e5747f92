// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene atoms, pinhole camera and the perspective projection of 3D Gaussians
// onto the image plane (local affine approximation of the projective map).

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lodgs/errors.hpp"

namespace lodgs {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat23 = Eigen::Matrix<T, 2, 3>;

template <typename T> inline T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

/// Numerically stable log(1 + e^x).
template <typename T> inline T softplus(T x)
{
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Inverse of softplus for y > 0.
template <typename T> inline T softplus_inverse(T y)
{
    return y > T(20) ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

template <typename T> inline T logit(T p) { return std::log(p / (T(1) - p)); }

/// Learnable 3D Gaussian. Rotation is a (w, x, y, z) quaternion that need not be
/// unit length; it is renormalized on every use.
template <typename T>
struct GaussianPrimitive {
    Vec3<T> position = Vec3<T>::Zero();
    Vec4<T> rotation{T(1), T(0), T(0), T(0)};
    Vec3<T> log_scales = Vec3<T>::Zero();
    T opacity_logit = T(0);
    Vec3<T> color = Vec3<T>::Constant(T(0.5));

    T opacity() const { return sigmoid(opacity_logit); }

    template <typename U> GaussianPrimitive<U> cast() const
    {
        GaussianPrimitive<U> g;
        g.position = position.template cast<U>();
        g.rotation = rotation.template cast<U>();
        g.log_scales = log_scales.template cast<U>();
        g.opacity_logit = static_cast<U>(opacity_logit);
        g.color = color.template cast<U>();
        return g;
    }
};

/// Pinhole camera. `rotation`/`translation` map world to camera coordinates
/// (x right, y down, z forward).
template <typename T>
struct Camera {
    Mat3<T> rotation = Mat3<T>::Identity();
    Vec3<T> translation = Vec3<T>::Zero();
    T fx = T(1), fy = T(1);
    T cx = T(0), cy = T(0);
    int width = 1, height = 1;
    T near = T(0.01);

    Vec3<T> to_camera(const Vec3<T>& world) const { return rotation * world + translation; }
    Vec3<T> center() const { return -rotation.transpose() * translation; }
    T focal() const { return std::sqrt(fx * fy); }

    bool valid() const
    {
        const T err = (rotation.transpose() * rotation - Mat3<T>::Identity()).cwiseAbs().maxCoeff();
        return err <= std::sqrt(std::numeric_limits<T>::epsilon()) && fx > T(0) && fy > T(0) && near > T(0) && width >= 1 && height >= 1;
    }

    /// Same viewpoint with intrinsics and resolution multiplied by `factor`.
    Camera scaled(T factor, int new_width, int new_height) const
    {
        Camera c = *this;
        c.fx *= factor;
        c.fy *= factor;
        c.cx *= factor;
        c.cy *= factor;
        c.width = new_width;
        c.height = new_height;
        return c;
    }

    template <typename U> Camera<U> cast() const
    {
        Camera<U> c;
        c.rotation = rotation.template cast<U>();
        c.translation = translation.template cast<U>();
        c.fx = static_cast<U>(fx);
        c.fy = static_cast<U>(fy);
        c.cx = static_cast<U>(cx);
        c.cy = static_cast<U>(cy);
        c.width = width;
        c.height = height;
        c.near = static_cast<U>(near);
        return c;
    }
};

/// Camera at `eye` looking at `target`; world up is +z.
template <typename T>
Camera<T> look_at(const Vec3<T>& eye, const Vec3<T>& target, T focal, int width, int height, T near = T(0.01))
{
    Vec3<T> forward = (target - eye).normalized();
    Vec3<T> up(T(0), T(0), T(1));
    if (std::abs(forward.dot(up)) > T(1) - T(1e-9))
        up = Vec3<T>(T(0), T(1), T(0));
    const Vec3<T> right = forward.cross(up).normalized();
    const Vec3<T> down = forward.cross(right);

    Camera<T> cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.cx = T(width) / T(2);
    cam.cy = T(height) / T(2);
    cam.width = width;
    cam.height = height;
    cam.near = near;
    return cam;
}

/// Rasterization unit: a projected, filtered Gaussian.
template <typename T>
struct Splat2D {
    Vec2<T> mean2d = Vec2<T>::Zero();
    Mat2<T> cov2d = Mat2<T>::Identity();
    T depth = T(0);
    Vec3<T> color = Vec3<T>::Zero();
    T opacity = T(0);
};

template <typename T>
Mat3<T> quaternion_to_rotation(const Vec4<T>& q)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

/// Intermediates of the covariance factorization, kept for the backward pass.
template <typename T>
struct CovarianceParts {
    Vec4<T> unit_rotation;
    Mat3<T> rotation;
    Vec3<T> scales;
    Mat3<T> rs;  // R * S
    Mat3<T> cov;
};

template <typename T>
CovarianceParts<T> covariance_parts(const GaussianPrimitive<T>& g)
{
    CovarianceParts<T> p;
    p.unit_rotation = g.rotation / g.rotation.norm();
    p.rotation = quaternion_to_rotation(p.unit_rotation);
    p.scales = g.log_scales.array().exp();
    p.rs = p.rotation * p.scales.asDiagonal();
    p.cov = p.rs * p.rs.transpose();
    return p;
}

/// Sigma = R S S^T R^T.
template <typename T>
Mat3<T> build_covariance(const GaussianPrimitive<T>& g)
{
    return covariance_parts(g).cov;
}

/// Screen-space footprint of a 3D Gaussian.
template <typename T>
struct Projection {
    Vec2<T> mean2d;
    Mat2<T> cov2d;
    T depth;
    Vec3<T> t_cam;   // camera-space mean
    Mat23<T> jw;     // J * W, the linearized world-to-pixel map
};

template <typename T>
Mat23<T> projection_jacobian(const Camera<T>& cam, const Vec3<T>& t)
{
    const T iz = T(1) / t.z();
    const T iz2 = iz * iz;
    Mat23<T> j;
    j << cam.fx * iz, T(0), -cam.fx * t.x() * iz2,
        T(0), cam.fy * iz, -cam.fy * t.y() * iz2;
    return j;
}

/// Projects mean and covariance. Throws CulledBehindCamera when depth <= near.
template <typename T>
Projection<T> project(const Vec3<T>& position, const Mat3<T>& sigma3d, const Camera<T>& cam)
{
    Projection<T> out;
    out.t_cam = cam.to_camera(position);
    out.depth = out.t_cam.z();
    if (!(out.depth > cam.near))
        throw CulledBehindCamera();
    const T iz = T(1) / out.depth;
    out.mean2d = Vec2<T>(cam.fx * out.t_cam.x() * iz + cam.cx, cam.fy * out.t_cam.y() * iz + cam.cy);
    out.jw = projection_jacobian(cam, out.t_cam) * cam.rotation;
    out.cov2d = out.jw * sigma3d * out.jw.transpose();
    // Exact symmetry; the two off-diagonal sums can differ in the last bit.
    out.cov2d(1, 0) = out.cov2d(0, 1);
    return out;
}

template <typename T>
Projection<T> project(const GaussianPrimitive<T>& g, const Mat3<T>& sigma3d, const Camera<T>& cam)
{
    return project(g.position, sigma3d, cam);
}

/// Pixels per world unit at `position`: sqrt(fx*fy) / |position - camera center|.
template <typename T>
T sampling_rate(const Camera<T>& cam, const Vec3<T>& position)
{
    const Vec3<T> t = cam.to_camera(position);
    if (!(t.z() > cam.near))
        throw CulledBehindCamera();
    return cam.focal() / t.norm();
}

}  // namespace lodgs
