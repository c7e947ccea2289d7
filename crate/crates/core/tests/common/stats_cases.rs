//! Reference values computed with an independent statistics library (SciPy).

/// `(x, dof, cdf)`.
pub const T_CDF: &[(f64, f64, f64)] = &[
    (0.0, 1.0, 0.5),
    (1.0, 1.0, 0.7500000000000002),
    (-2.0, 2.0, 0.09175170953613696),
    (0.5, 3.5, 0.6765747803387245),
    (1.96, 10.0, 0.9607818798761502),
    (-0.8, 25.0, 0.21562369102825313),
    (3.3, 5.0, 0.989262249850001),
    (-4.0, 12.5, 0.0008145314603234219),
    (7.0, 60.0, 0.9999999987492222),
    (0.05, 0.5, 0.5134670043603707),
    (-12.0, 3.0, 0.000622507900394668),
    (2.0, 1000.0, 0.9771148267533741),
];

pub struct WelchCase {
    pub d_s: &'static [f64],
    pub d_c: &'static [f64],
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

/// One-sided Welch test of `mean(d_c) > mean(d_s)`.
pub const WELCH: &[WelchCase] = &[
    WelchCase {
        d_s: &[0.591, 0.188, 0.725, 0.782, -0.085],
        d_c: &[-0.021, 0.551, 0.374, 0.493, 0.159, 0.852, 0.811],
        t: 0.09516892029417982,
        dof: 7.849163913638048,
        p: 0.46328267071732754,
    },
    WelchCase {
        d_s: &[0.526, 0.951, 0.687, 0.156, 0.648, 0.116, 0.851, 0.48, 0.426, 0.228],
        d_c: &[1.139, 0.588, 0.479, 0.509, 0.863, 0.796, 0.815, 0.822, 1.507, 0.487],
        t: 2.14930082765967,
        dof: 17.69423350454475,
        p: 0.022853638854412796,
    },
    WelchCase {
        d_s: &[0.244, 0.093, 0.808, 1.064, 0.443, 0.08, 0.088, 0.825, 0.872, 0.772, 0.167, 0.616, 0.558, 0.609, 0.936, 0.612, 0.839, 0.534, 0.645, 0.816, -0.229, 0.34, 0.265, 0.181, 0.362, 1.247, 0.067, 0.984, -0.341, 0.333],
        d_c: &[0.865, 1.034, 1.084, 1.117, 0.661, 0.615, 1.143, 0.723, 0.29, 0.347, 0.432, 0.999, 0.857, 1.076, 0.629, 0.863, 1.05, 0.676, 0.983, 0.535, 0.655, 0.647, 0.322, 0.995, 0.612],
        t: 3.1082841943398276,
        dof: 51.1694176204236,
        p: 0.0015351612797195066,
    },
    WelchCase {
        d_s: &[0.507, 0.788, 0.768, 0.899, 0.441, 0.246, 0.452, -0.512],
        d_c: &[0.371, 0.421, 0.551, 1.11, 0.588, 0.799, 1.47, 0.807, 1.245, 0.577, 0.868, 0.57, 0.814, 1.286, 0.259, 1.124, 1.045, 0.712, 0.372, 0.979, 0.738, 1.043, 0.959, 1.591, 0.854, 0.541, 1.022, 1.038, 1.494, 1.284, 1.093, 1.535, 0.474, 0.694, 0.579, 0.794, 0.399, 1.204, 0.861, 0.362],
        t: 2.479465260181135,
        dof: 8.885806539315515,
        p: 0.01767005381146237,
    },
    WelchCase {
        d_s: &[-0.211, 0.719, 1.087, 1.898, 2.54, 0.79, -0.193, -0.992, 0.687, -0.069, 0.209, 0.072, 0.401, 1.246, 0.61, 0.389, -0.225, -0.672, 0.16, 0.462, 1.738, 0.591, 1.188, 0.15, -0.329, -0.176, -0.008, 1.99, -0.075, 1.087, -0.132, 1.152, 0.769, 0.39, 0.471, 0.042, 0.812, 0.182, -0.358, -0.395, 0.621, 1.605, 0.612, 0.417, 0.7, 1.414, 0.654, 0.212, 1.274, 0.8, 1.575, 0.628, -0.357, -0.458, 1.656, 1.707, 0.374, 0.232, 1.523, -0.275, -0.126, 0.95, 0.224, 0.496, 0.386, 0.736, 1.485, 0.563, 0.951, -0.935, 0.466, -0.09, -0.353, -0.115, 0.266, 1.141, -0.428, 0.521, 0.161, 0.271, 1.202, 0.877, 1.436, 0.392, 0.013, 0.343, 0.67, 0.624, -0.259, 0.563, 0.66, 2.262, 1.814, -0.097, 0.299, -0.524, 0.087, 0.721, 1.344, -0.01],
        d_c: &[0.838, 0.241, 1.035, 0.675, 0.888, 0.749, 1.062, 0.397, 0.513, 1.952, 0.585, 0.661, 1.835, 2.262, 0.631, 0.953, 1.237, 1.791, 0.705, 1.002, 1.411, 1.274, 0.95, 1.046, 0.55, 1.005, 0.993, 1.193, 0.878, 1.289, 1.505, 1.162, 1.241, 1.121, 1.1, 0.811, 1.227, 1.061, 1.937, 1.729, 1.254, 0.795, 0.655, 1.576, 1.205, 1.292, 0.402, 1.471, 1.282, 0.656, 0.911, 1.205, 1.121, 0.983, 1.059, 0.999, 1.161, 1.689, 0.073, 1.005, 1.171, 1.218, 0.951, 0.397, 1.231, 1.791, 0.486, 1.446, 0.969, 1.075, 0.679, 0.966, 1.62, 1.333, 1.793, 1.571, 1.276, 1.798, 1.276, 1.431, 0.981, 1.127, 0.821, 1.496, 0.629, 1.413, 1.024, 1.568, 1.4, 1.828, 1.392, 0.471, 1.073, 0.631, 0.893, 1.704, 1.355, 0.82, 0.695, 1.113],
        t: 7.235517591240964,
        dof: 160.2211426097922,
        p: 9.068497492456041e-12,
    },
    WelchCase {
        d_s: &[-0.473, -0.037, 0.75],
        d_c: &[1.712, 1.494, 0.333],
        t: 1.971128366514388,
        dof: 3.878422211706546,
        p: 0.06111514456094201,
    },
    WelchCase {
        d_s: &[0.774, 0.565, 0.873, 1.955, -1.357, -0.032, 1.032, -0.923, 1.828, 0.832, 1.262, -0.014, 1.232, 1.462, 0.71, 0.711, 0.743, -0.277, 0.367, 0.363, 0.845, 1.4, -0.453, 0.387, 1.833, -0.169, -0.24, 0.682, 1.26, 0.51, 1.696, 1.271, 1.258, 0.999, 2.595, 0.315, -1.303, 1.944, 0.088, 0.597, 1.679, -0.942, -0.626, -0.941, -0.215, 0.896, 0.972, 0.749, -0.771, -1.579],
        d_c: &[1.422, 1.211, 1.584, 1.681, 1.455, 1.704, 1.492, 1.612, 1.118, 1.328, 1.479, 1.728],
        t: 6.466113044236241,
        dof: 59.412874679132905,
        p: 1.0483498840379835e-08,
    },
    WelchCase {
        d_s: &[0.106, 1.021, 0.234, 0.382, 1.33, -1.493, -0.796, -0.982, -1.834, -0.178, 1.249, 0.215, 0.698, 1.589, 1.828, 0.431, 1.854, 0.592, -0.337, -0.094],
        d_c: &[0.958, 1.195, 1.407, 1.871, 2.238, 0.997, 1.707, 1.134, 1.74, 1.498, 0.818, 1.921, 1.308, 1.336, 1.122, 1.288, 1.721, 1.474, 1.681, 1.695, 2.078, 1.413, 0.959, 1.977, 1.417, 1.996, 1.703, 1.498, 1.69, 2.33, 2.381, 1.578, 1.614, 1.98, 1.212, 1.683, 1.54, 1.676, 1.217, 0.914, 0.721, 1.103, 1.367, 1.433, 2.325, 1.992, 1.165, 1.689, 1.387, 1.436, 1.624, 1.798, 1.414, 1.976, 1.093, 1.553, 2.589, 1.639, 2.123, 1.587],
        t: 5.342749624527209,
        dof: 20.9666041171443,
        p: 1.3471463628477427e-05,
    },
];
