/** Fixed category colour mapping: 1 red, 2 yellow, 3 blue. */

export type Category = 1 | 2 | 3;

export const CATEGORY_ORDER: Category[] = [1, 2, 3];

export const CATEGORY_NAMES: Record<Category, string> = {
  1: "bronchiectasis / airway thickening",
  2: "mucus plugging",
  3: "consolidation / atelectasis",
};

export const CATEGORY_RGB: Record<Category, [number, number, number]> = {
  1: [255, 0, 0],
  2: [255, 255, 0],
  3: [0, 0, 255],
};

export const LUNG_OUTLINE_RGB: [number, number, number] = [0, 255, 128];
