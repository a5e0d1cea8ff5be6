/// (tp, fp, tn, fn, BA, F1, WBA at 0.7), evaluated by hand as exact fractions.
const FIXTURES: [(u64, u64, u64, u64, f64, f64, f64); 12] = [
    (5, 0, 5, 0, 1.0, 1.0, 1.0),
    (3, 2, 2, 1, 5.0 / 8.0, 2.0 / 3.0, 27.0 / 40.0),
    (0, 0, 6, 4, 1.0 / 2.0, 0.0, 3.0 / 10.0),
    (10, 3, 7, 2, 23.0 / 30.0, 4.0 / 5.0, 119.0 / 150.0),
    (1, 9, 1, 9, 1.0 / 10.0, 1.0 / 10.0, 1.0 / 10.0),
    (50, 5, 40, 20, 101.0 / 126.0, 4.0 / 5.0, 23.0 / 30.0),
    (7, 0, 0, 3, 7.0 / 20.0, 14.0 / 17.0, 49.0 / 100.0),
    (0, 4, 12, 0, 3.0 / 8.0, 0.0, 9.0 / 40.0),
    (2, 1, 1, 0, 3.0 / 4.0, 4.0 / 5.0, 17.0 / 20.0),
    (13, 17, 19, 11, 77.0 / 144.0, 13.0 / 27.0, 43.0 / 80.0),
    (99, 1, 1, 99, 1.0 / 2.0, 99.0 / 149.0, 1.0 / 2.0),
    (8, 8, 8, 8, 1.0 / 2.0, 1.0 / 2.0, 1.0 / 2.0),
];
